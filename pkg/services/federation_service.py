from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import get_logger
from exceptions import DataError, NumericalError
from models.data_model import ClientDataset, LabeledData, MixtureSpec
from models.experiment_model import ExperimentConfig, RoundConfig
from models.federation_model import ClientUpdate, FederationState
from models.metric_model import MetricRow
from models.network_model import Classifier, CondDiscriminator, CondGenerator
from models.nn_model import Mlp, MlpGrads
from services import data_service, fairness_service, network_service, nn_service

logger = get_logger(__name__)

# Propósitos de los flujos aleatorios: cada uno tiene su propio Generator
STREAM_INIT = 0
STREAM_SELECT = 1
STREAM_PENALTY = 2
STREAM_GAN = 3
STREAM_SERVER = 4

GAN_METHODS = ("afed_g", "afed_gan")


def stream(seed: int, round_index: int, client_id: int, purpose: int) -> np.random.Generator:
    """Flujo determinista por (semilla, ronda, cliente, propósito)."""
    return np.random.default_rng([int(seed), int(round_index), int(client_id), int(purpose)])


def select_clients(
    n_clients: int, participant_ratio: float, seed: int, round_index: int = 0
) -> List[int]:
    """max(1, round(r·N)) clientes sin reemplazo, devueltos en orden ascendente."""
    if n_clients < 1:
        raise DataError("Se necesita al menos un cliente")
    if not 0.0 < participant_ratio <= 1.0:
        raise DataError("participant_ratio debe estar en (0, 1]")
    k = min(n_clients, max(1, int(np.floor(participant_ratio * n_clients + 0.5))))
    if k == n_clients:
        return list(range(n_clients))
    rng = stream(seed, round_index, 0, STREAM_SELECT)
    return sorted(int(i) for i in rng.choice(n_clients, size=k, replace=False))


def _add_grads(a: MlpGrads, b: MlpGrads, scale: float = 1.0) -> MlpGrads:
    return MlpGrads(
        weights=[x + scale * y for x, y in zip(a.weights, b.weights)],
        biases=[x + scale * y for x, y in zip(a.biases, b.biases)],
        input=a.input,
    )


def _real_partners(a: np.ndarray, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Para cada fila, índice de una muestra real del otro grupo; None si falta un grupo."""
    idx0 = np.flatnonzero(a == 0)
    idx1 = np.flatnonzero(a == 1)
    if idx0.size == 0 or idx1.size == 0:
        return None
    partners = np.empty(a.shape[0], dtype=np.int64)
    partners[a == 0] = rng.choice(idx1, size=idx0.size)
    partners[a == 1] = rng.choice(idx0, size=idx1.size)
    return partners


def _penalty_step(
    c: Classifier,
    z: np.ndarray,
    a: np.ndarray,
    generator: Optional[CondGenerator],
    cfg: RoundConfig,
    rng: np.random.Generator,
    client_id: int,
) -> Optional[Tuple[float, MlpGrads, np.ndarray]]:
    """
    Penalización mixup con el latente de atributo 0 en t=1 y el de atributo 1 en t=0.
    Devuelve (valor, grads de h^y, dL/dz sobre los latentes reales) o None si no aplica.
    """
    if cfg.method == "fedreg":
        partners = _real_partners(a, rng)
        if partners is None:
            logger.warning(f"Cliente {client_id}: un solo grupo sensible, se omite la penalización")
            return None
        z_partner = z[partners]
    else:
        z_partner = network_service.generate(generator, 1 - a, rng=rng)

    is0 = (a == 0)[:, None]
    z_t = np.where(is0, z, z_partner)
    z_f = np.where(is0, z_partner, z)
    batch = fairness_service.mix(
        z_t, np.zeros(a.shape[0]), z_f, np.ones(a.shape[0]), cfg.mixup_alpha, rng=rng
    )
    result = fairness_service.fairness_penalty(c, batch, mode=cfg.penalty_mode)
    grad_z = np.where(is0, result.grad_z_t, result.grad_z_f)
    if cfg.method == "fedreg":
        # El compañero también es un latente real: su gradiente vuelve a E
        np.add.at(grad_z, partners, np.where(is0, result.grad_z_f, result.grad_z_t))
    return result.value, result.label_head_grads, grad_z


def local_update_classifier(
    ds: ClientDataset,
    classifier: Classifier,
    generator: Optional[CondGenerator],
    cfg: RoundConfig,
    rng: Optional[np.random.Generator] = None,
    round_index: int = -1,
) -> ClientUpdate:
    """
    T1 pasos de lote completo. h^a y E con J1 (tasa η); h^y con J5 (tasa β); E recibe
    ∇J1 + (β/η)·∇J5 con tasa η, es decir θ^E ← θ^E − η∇J1 − β∇J5 en SGD.
    El generador queda congelado.
    """
    if len(ds) == 0:
        raise DataError(f"El cliente {ds.client_id} no tiene datos")
    penalize = cfg.method != "fedavg" and cfg.lam > 0
    if penalize and cfg.method in GAN_METHODS and generator is None:
        raise DataError(f"El método {cfg.method} necesita un generador")
    rng = rng if rng is not None else np.random.default_rng(0)

    c = classifier.copy()
    opt_e = nn_service.init_opt_state(cfg.classifier_optimizer, cfg.lr_classifier)
    opt_a = nn_service.init_opt_state(cfg.classifier_optimizer, cfg.lr_classifier)
    opt_y = nn_service.init_opt_state(cfg.classifier_optimizer, cfg.lr_fair)
    fair_scale = cfg.lr_fair / cfg.lr_classifier
    losses: Dict[str, float] = {}

    for _ in range(cfg.local_epochs):
        z = nn_service.forward(c.extractor, ds.x)

        probs_a = nn_service.forward(c.attribute_head, z)
        loss_a, g_a = nn_service.cross_entropy(probs_a, ds.a)
        grads_a = nn_service.backward(c.attribute_head, z, g_a, wrt="logits")

        probs_y = nn_service.forward(c.label_head, z)
        loss_y, g_y = nn_service.cross_entropy(probs_y, ds.y)
        grads_y = nn_service.backward(c.label_head, z, g_y, wrt="logits")
        grad_z5 = grads_y.input

        loss_fair = 0.0
        if penalize:
            out = _penalty_step(c, z, ds.a, generator, cfg, rng, ds.client_id)
            if out is not None:
                loss_fair, head_grads, grad_z_pen = out
                grads_y = _add_grads(grads_y, head_grads, cfg.lam)
                grad_z5 = grad_z5 + cfg.lam * grad_z_pen

        for name, value in (("loss_a", loss_a), ("loss_y", loss_y), ("loss_fair", loss_fair)):
            if not np.isfinite(value):
                raise NumericalError(
                    f"{name} no finita en el cliente {ds.client_id}", round_index=round_index
                )

        upstream_e = fair_scale * grad_z5
        if cfg.attribute_head_feedback:
            upstream_e = upstream_e + grads_a.input
        grads_e = nn_service.backward(c.extractor, ds.x, upstream_e)

        c.extractor, opt_e = nn_service.step_mlp(c.extractor, grads_e, opt_e)
        c.attribute_head, opt_a = nn_service.step_mlp(c.attribute_head, grads_a, opt_a)
        c.label_head, opt_y = nn_service.step_mlp(c.label_head, grads_y, opt_y)
        losses = {"loss_a": loss_a, "loss_y": loss_y, "loss_fair": loss_fair}

    logger.debug(f"Cliente {ds.client_id}: {losses}")
    return ClientUpdate(client_id=ds.client_id, n_k=ds.n_k, classifier=c, losses=losses)


def _discriminator_grads(
    d: CondDiscriminator, z: np.ndarray, a: np.ndarray, g_logits: np.ndarray
) -> MlpGrads:
    return nn_service.backward(
        d.net, network_service.discriminator_input(d, z, a), g_logits, wrt="logits"
    )


def local_update_gan(
    ds: ClientDataset,
    classifier: Classifier,
    generator: CondGenerator,
    discriminator: CondDiscriminator,
    cfg: RoundConfig,
    rng: Optional[np.random.Generator] = None,
    round_index: int = -1,
) -> Tuple[CondGenerator, CondDiscriminator, Dict[str, float]]:
    """
    T2 pasos alternados sobre los latentes reales z = E(x) (E congelado): primero D
    separa (z, a) reales de (G(ε, a), a), luego G intenta engañar a D.
    """
    if len(ds) == 0:
        raise DataError(f"El cliente {ds.client_id} no tiene datos")
    rng = rng if rng is not None else np.random.default_rng(0)
    g, d = generator.copy(), discriminator.copy()
    opt_g = nn_service.init_opt_state(cfg.gan_optimizer, cfg.lr_generator)
    opt_d = nn_service.init_opt_state(cfg.gan_optimizer, cfg.lr_discriminator)
    z_real = network_service.extract(classifier, ds.x)
    a = ds.a
    latent_dim = z_real.shape[1]
    loss_d = loss_g = float("nan")

    for _ in range(cfg.gan_epochs):
        fake = network_service.generate(g, a, rng=rng)
        p_real = network_service.discriminate(d, z_real, a)
        p_fake = network_service.discriminate(d, fake, a)
        loss_d, g_real, g_fake = network_service.discriminator_loss(p_real, p_fake, cfg.gan_loss)
        grads_d = _add_grads(
            _discriminator_grads(d, z_real, a, g_real), _discriminator_grads(d, fake, a, g_fake)
        )
        d.net, opt_d = nn_service.step_mlp(d.net, grads_d, opt_d)

        noise = network_service.sample_noise(g, a.shape[0], rng)
        g_in = network_service.generator_input(g, a, noise)
        fake = nn_service.forward(g.net, g_in)
        p_fake = network_service.discriminate(d, fake, a)
        loss_g, g_gen = network_service.generator_loss(p_fake, cfg.gan_loss)
        grad_fake = _discriminator_grads(d, fake, a, g_gen).input[:, :latent_dim]
        grads_g = nn_service.backward(g.net, g_in, grad_fake)
        g.net, opt_g = nn_service.step_mlp(g.net, grads_g, opt_g)

        if not (np.isfinite(loss_d) and np.isfinite(loss_g)):
            raise NumericalError(
                f"Pérdidas del GAN no finitas en el cliente {ds.client_id}", round_index=round_index
            )

    return g, d, {"loss_d": float(loss_d), "loss_g": float(loss_g)}


def aggregate(
    updates: Sequence[ClientUpdate],
) -> Tuple[Classifier, Optional[CondGenerator], Optional[CondDiscriminator]]:
    """
    Σ ω_k θ_k con ω_k = n_k / Σ n_k. Las actualizaciones se suman en orden de client_id,
    así el resultado no depende del orden de la lista.
    """
    if not updates:
        raise DataError("No hay actualizaciones que agregar")
    ordered = sorted(updates, key=lambda u: u.client_id)
    total = float(sum(u.n_k for u in ordered))
    if total <= 0:
        raise DataError("La suma de n_k debe ser positiva")
    weights = [u.n_k / total for u in ordered]

    classifier = Classifier(
        extractor=nn_service.weighted_average(
            [u.classifier.extractor for u in ordered], weights, "extractor"
        ),
        label_head=nn_service.weighted_average(
            [u.classifier.label_head for u in ordered], weights, "label_head"
        ),
        attribute_head=nn_service.weighted_average(
            [u.classifier.attribute_head for u in ordered], weights, "attribute_head"
        ),
    )
    generator = None
    if all(u.generator is not None for u in ordered):
        generator = CondGenerator(
            net=nn_service.weighted_average([u.generator.net for u in ordered], weights, "generator"),
            noise_dim=ordered[0].generator.noise_dim,
        )
    discriminator = None
    if all(u.discriminator is not None for u in ordered):
        discriminator = CondDiscriminator(
            net=nn_service.weighted_average(
                [u.discriminator.net for u in ordered], weights, "discriminator"
            ),
            conditional=ordered[0].discriminator.conditional,
        )
    return classifier, generator, discriminator


def server_train_generator(
    generator: CondGenerator,
    attribute_heads: Sequence[Mlp],
    cfg: RoundConfig,
    rng: Optional[np.random.Generator] = None,
    steps: Optional[int] = None,
) -> Tuple[CondGenerator, List[float]]:
    """
    Destila en G el conocimiento de las cabezas h^a_k: minimiza
    J2 = Σ_k CE(h^a_k(G(ε, a)), a) con a uniforme en {0, 1}. Devuelve G y la curva de J2.
    """
    steps = cfg.server_generator_steps if steps is None else steps
    if not attribute_heads:
        raise DataError("Se necesita al menos una cabeza de atributo")
    rng = rng if rng is not None else np.random.default_rng(0)
    g = generator.copy()
    opt = nn_service.init_opt_state(cfg.gan_optimizer, cfg.lr_server_generator)
    history: List[float] = []
    for _ in range(steps):
        a = rng.integers(0, 2, size=cfg.server_batch_size)
        noise = network_service.sample_noise(g, a.shape[0], rng)
        g_in = network_service.generator_input(g, a, noise)
        z = nn_service.forward(g.net, g_in)
        loss = 0.0
        grad_z = np.zeros_like(z)
        for head in attribute_heads:
            head_loss, g_logits = nn_service.cross_entropy(nn_service.forward(head, z), a)
            loss += head_loss
            grad_z += nn_service.backward(head, z, g_logits, wrt="logits").input
        g.net, opt = nn_service.step_mlp(g.net, nn_service.backward(g.net, g_in, grad_z), opt)
        history.append(float(loss))
    return g, history


def init_state(cfg: ExperimentConfig, input_dim: int, seed: int) -> FederationState:
    rng = stream(seed, 0, 0, STREAM_INIT)
    classifier = network_service.build_classifier(input_dim, cfg.network, rng)
    generator = None
    discriminator = None
    if cfg.method in GAN_METHODS:
        generator = network_service.build_generator(cfg.network, rng)
    if cfg.method == "afed_gan":
        discriminator = network_service.build_discriminator(cfg.network, rng)
    return FederationState(
        classifier=classifier,
        generator=generator,
        discriminator=discriminator,
        round_index=0,
        seed=seed,
    )


def evaluate(classifier: Classifier, test: LabeledData) -> Tuple[float, float]:
    """Exactitud y ΔDP con umbral duro 0.5 sobre el conjunto de prueba global."""
    pred = network_service.predict_labels(classifier, test.x)
    acc = float(np.mean(pred == test.y))
    return acc, fairness_service.dp_gap(pred, test.a).gap


def _check_state(state: FederationState, round_index: int) -> None:
    nets = [state.classifier.extractor, state.classifier.label_head, state.classifier.attribute_head]
    if state.generator is not None:
        nets.append(state.generator.net)
    if state.discriminator is not None:
        nets.append(state.discriminator.net)
    for net in nets:
        for p in net.params():
            nn_service.check_finite(p, "los parámetros globales", round_index)


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def run_round(
    state: FederationState,
    datasets: Sequence[ClientDataset],
    test: LabeledData,
    cfg: RoundConfig,
) -> Tuple[FederationState, MetricRow]:
    """
    Una ronda: selección → difusión → actualizaciones locales (según método) →
    agregación (→ destilación del generador en afed_g) → métricas globales.
    """
    round_index = state.round_index + 1
    seed = state.seed
    selected = select_clients(len(datasets), cfg.participant_ratio, seed, round_index)
    logger.debug(f"Ronda {round_index}: clientes {selected}")

    updates: List[ClientUpdate] = []
    for k in selected:
        ds = datasets[k]
        update = local_update_classifier(
            ds,
            state.classifier,
            state.generator,
            cfg,
            rng=stream(seed, round_index, ds.client_id, STREAM_PENALTY),
            round_index=round_index,
        )
        if cfg.method == "afed_gan":
            update.generator, update.discriminator, gan_losses = local_update_gan(
                ds,
                update.classifier,
                state.generator,
                state.discriminator,
                cfg,
                rng=stream(seed, round_index, ds.client_id, STREAM_GAN),
                round_index=round_index,
            )
            update.losses.update(gan_losses)
        updates.append(update)

    classifier, generator, discriminator = aggregate(updates)
    loss_g = _mean([u.losses["loss_g"] for u in updates if "loss_g" in u.losses])
    loss_d = _mean([u.losses["loss_d"] for u in updates if "loss_d" in u.losses])
    if cfg.method == "afed_gan":
        new_generator, new_discriminator = generator, discriminator
    elif cfg.method == "afed_g":
        new_discriminator = None
        new_generator, history = server_train_generator(
            state.generator,
            [u.classifier.attribute_head for u in sorted(updates, key=lambda u: u.client_id)],
            cfg,
            rng=stream(seed, round_index, 0, STREAM_SERVER),
        )
        loss_g = history[-1] if history else None
    else:
        new_generator, new_discriminator = state.generator, state.discriminator

    new_state = FederationState(
        classifier=classifier,
        generator=new_generator,
        discriminator=new_discriminator,
        round_index=round_index,
        seed=seed,
    )
    _check_state(new_state, round_index)

    acc, gap = evaluate(classifier, test)
    row = MetricRow(
        round=round_index,
        method=cfg.method,
        seed=seed,
        lam=cfg.lam,
        acc=acc,
        dp_gap=gap,
        loss_y=_mean([u.losses["loss_y"] for u in updates]),
        loss_fair=_mean([u.losses["loss_fair"] for u in updates]),
        loss_g=loss_g,
        loss_d=loss_d,
    )
    logger.info(
        f"[{cfg.method} λ={cfg.lam} seed={seed}] ronda {round_index}: "
        f"acc={acc:.4f} ΔDP={gap:.4f} loss_y={row.loss_y:.4f}"
    )
    return new_state, row


def build_datasets(cfg: ExperimentConfig, seed: int) -> Tuple[List[ClientDataset], LabeledData]:
    """Clientes de entrenamiento y conjunto de prueba global según el bloque dataset."""
    block = cfg.dataset
    n_clients = cfg.partition.n_clients
    test_fraction = cfg.partition.test_fraction

    if block.kind == "toy":
        spec = MixtureSpec.default(
            separation=block.separation,
            variance=block.variance,
            dominant_fraction=block.dominant_fraction,
            client_components=block.client_components,
            label_separation=block.label_separation,
        )
        clients = data_service.gen_toy_mixture(spec, block.per_client, n_clients, seed)
        if block.test_distribution == "balanced":
            test = data_service.gen_toy_balanced(spec, block.test_per_component, seed)
            return clients, test
        train_clients, test_parts = [], []
        for client in clients:
            train_idx, test_idx = data_service.stratified_split(client, test_fraction, seed)
            part = client.subset(train_idx)
            train_clients.append(
                ClientDataset(x=part.x, y=part.y, a=part.a, client_id=client.client_id)
            )
            test_parts.append(client.subset(test_idx))
        test = LabeledData.concat(test_parts)
    else:
        if block.kind == "synthetic":
            pool = data_service.gen_synthetic_tabular(
                block.n_samples, block.n_features, block.correlation, seed
            )
            train_idx, test_idx = data_service.stratified_split(pool, test_fraction, seed)
            train, test = pool.subset(train_idx), pool.subset(test_idx)
        else:
            train, test = data_service.load_csv_split(
                block.path, block.columns, test_fraction, seed
            )
        train_clients = data_service.dirichlet_partition(
            train, n_clients, cfg.partition.concentration, seed
        )

    if len(test) == 0:
        logger.warning("Conjunto de prueba vacío; se evalúa sobre los datos de entrenamiento")
        test = LabeledData.concat(train_clients)
    return train_clients, test


def _checkpoint_path(out_dir: Path, lam: float, seed: int, round_index: int) -> Path:
    return out_dir / "checkpoints" / f"lambda{lam:g}_seed{seed}_round{round_index:04d}.json"


def _latest_checkpoint(out_dir: Path, lam: float, seed: int) -> Optional[Path]:
    # El nombre lleva la ronda con ceros a la izquierda: el orden léxico es el cronológico
    found = sorted((out_dir / "checkpoints").glob(f"lambda{lam:g}_seed{seed}_round*.json"))
    return found[-1] if found else None


def _resume_from(
    cfg: ExperimentConfig, lam: float, seed: int, out_dir: Path
) -> Optional[Tuple[FederationState, List[MetricRow]]]:
    path = _latest_checkpoint(out_dir, lam, seed)
    if path is None:
        logger.info(f"[{cfg.method} λ={lam} seed={seed}] sin checkpoint previo; se empieza de cero")
        return None
    state, trace = network_service.read_checkpoint(path)
    if state.seed != seed or len(trace) != state.round_index:
        raise DataError(f"Checkpoint {path} no corresponde a la celda (λ={lam}, semilla={seed})")
    if any(row.method != cfg.method or row.lam != lam for row in trace):
        raise DataError(f"Checkpoint {path} pertenece a otro método o λ")
    logger.info(f"[{cfg.method} λ={lam} seed={seed}] reanudando desde la ronda {state.round_index}")
    return state, trace


def run_cell(
    cfg: ExperimentConfig,
    lam: float,
    seed: int,
    out_dir: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> Tuple[FederationState, List[MetricRow]]:
    """
    Calendario completo de rondas para una celda (λ, semilla); devuelve el estado final y la
    traza. Con resume=True continúa desde el último checkpoint de la celda en out_dir. Los
    flujos aleatorios dependen solo de (semilla, ronda, cliente), así que reanudar reproduce
    la ejecución sin cortes.
    """
    datasets, test = build_datasets(cfg, seed)
    state = init_state(cfg, datasets[0].n_features, seed)
    round_cfg = cfg.round_config(lam)
    every = cfg.output.checkpoint_every
    trace: List[MetricRow] = []
    if resume:
        if out_dir is None:
            raise DataError("Para reanudar hace falta out_dir")
        restored = _resume_from(cfg, lam, seed, Path(out_dir))
        if restored is not None:
            state, trace = restored
    for _ in range(state.round_index, round_cfg.rounds):
        try:
            state, row = run_round(state, datasets, test, round_cfg)
        except NumericalError as e:
            logger.error(
                f"[{cfg.method} λ={lam} seed={seed}] fallo numérico en la ronda {e.round_index}",
                exc_info=True,
            )
            raise
        trace.append(row)
        if out_dir is not None and every and state.round_index % every == 0:
            network_service.save_checkpoint(
                _checkpoint_path(Path(out_dir), lam, seed, state.round_index), state, trace
            )
    return state, trace


def run_experiment(
    cfg: ExperimentConfig,
    lam: float,
    seed: int,
    out_dir: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> List[MetricRow]:
    return run_cell(cfg, lam, seed, out_dir, resume)[1]


def run_sweep(
    cfg: ExperimentConfig,
    threads: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
    seeds: Optional[Sequence[int]] = None,
    resume: bool = False,
) -> List[MetricRow]:
    """
    Barrido λ × semilla. Cada celda es una ejecución independiente; con threads > 1 se
    reparten en un pool. El resultado se une en orden (λ, semilla, ronda).
    """
    seeds = list(seeds) if seeds is not None else cfg.sweep.seeds
    cells = sorted({(float(lam), int(seed)) for lam in cfg.sweep.lambdas for seed in seeds})
    logger.info(f"Barrido {cfg.name}: {len(cells)} celdas, {threads} hilo(s)")

    def _run(cell: Tuple[float, int]) -> List[MetricRow]:
        return run_experiment(cfg, cell[0], cell[1], out_dir, resume)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run, cells))
    else:
        results = [_run(cell) for cell in cells]
    return [row for trace in results for row in trace]
