import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import get_logger
from exceptions import DataError, SchemaError
from models.data_model import (
    ClientDataset,
    CsvSchema,
    GroupStats,
    LabeledData,
    MixtureSpec,
    NormalizationStats,
    PartitionSpec,
)

logger = get_logger(__name__)

STD_FLOOR = 1e-8
MAX_DIRICHLET_DRAWS = 1000


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _cholesky(cov: np.ndarray, component: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if not np.allclose(cov, cov.T):
        raise DataError(f"Covarianza del componente {component} no es simétrica")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DataError(f"Covarianza degenerada en el componente {component}")


def component_counts(dominant_fraction: float, per_client: int) -> Tuple[int, List[int]]:
    """Cantidad dominante y reparto del resto entre los otros tres componentes."""
    dominant = _round_half_up(dominant_fraction * per_client)
    rest = per_client - dominant
    others = [rest // 3] * 3
    for i in range(rest % 3):
        others[i] += 1
    return dominant, others


def _draw_components(
    spec: MixtureSpec,
    means: List[np.ndarray],
    chol: List[np.ndarray],
    counts: Sequence[int],
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, ys, as_ = [], [], []
    for comp, n in enumerate(counts):
        if n == 0:
            continue
        eps = rng.standard_normal((n, 2))
        xs.append(means[comp] + eps @ chol[comp].T)
        y, a = spec.groups[comp]
        ys.append(np.full(n, y))
        as_.append(np.full(n, a))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(as_)


def gen_toy_mixture(
    spec: MixtureSpec, per_client: int, n_clients: int = 4, seed: int = 0
) -> List[ClientDataset]:
    """
    Datos no i.i.d. del ejemplo de juguete: cada cliente toma una fracción fija de su
    componente dominante y reparte el resto a partes iguales entre los otros tres.
    Los conteos son deterministas; solo el muestreo dentro de cada componente es aleatorio.
    """
    if per_client < 20:
        raise DataError(f"per_client debe ser >= 20 (recibido {per_client})")
    chol = [_cholesky(c, i) for i, c in enumerate(spec.covariances)]
    means = [np.asarray(m, dtype=np.float64) for m in spec.means]
    components = spec.client_components or [k % 4 for k in range(n_clients)]
    if len(components) != n_clients:
        raise DataError("client_components debe tener un elemento por cliente")

    rng = np.random.default_rng(seed)
    dominant, others = component_counts(spec.dominant_fraction, per_client)
    clients = []
    for k in range(n_clients):
        dom = components[k]
        counts = {dom: dominant}
        for comp, n in zip([c for c in range(4) if c != dom], others):
            counts[comp] = n
        x, y, a = _draw_components(spec, means, chol, [counts[comp] for comp in range(4)], rng)
        order = rng.permutation(per_client)
        clients.append(ClientDataset(x=x[order], y=y[order], a=a[order], client_id=k))
    logger.debug(
        f"Mezcla de juguete generada: {n_clients} clientes, {dominant} dominantes + {others}"
    )
    return clients


def gen_toy_balanced(spec: MixtureSpec, per_component: int, seed: int = 0) -> LabeledData:
    """
    Conjunto global con la misma cantidad de cada componente (y ⟂ a). Usa un flujo aleatorio
    distinto del de los clientes para la misma semilla.
    """
    if per_component < 1:
        raise DataError(f"per_component debe ser >= 1 (recibido {per_component})")
    chol = [_cholesky(c, i) for i, c in enumerate(spec.covariances)]
    means = [np.asarray(m, dtype=np.float64) for m in spec.means]
    rng = np.random.default_rng([int(seed), 1])
    x, y, a = _draw_components(spec, means, chol, [per_component] * 4, rng)
    order = rng.permutation(4 * per_component)
    return LabeledData(x=x[order], y=y[order], a=a[order])


def gen_synthetic_tabular(
    n_samples: int, n_features: int, correlation: float = 1.0, seed: int = 0
) -> LabeledData:
    """
    Benchmark tabular sintético: a ~ Bernoulli(0.5), x ~ N(μ_a, I) con las dos primeras
    features desplazadas según a, e y = 1[w·x + ruido > 0]. `correlation` controla cuánto
    depende y de a a través de x.
    """
    if n_features < 2:
        raise DataError("n_features debe ser >= 2")
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=n_samples)
    x = rng.standard_normal((n_samples, n_features))
    x[:, 0] += correlation * (2 * a - 1)
    x[:, 1] += 0.5 * correlation * (2 * a - 1)
    w = np.concatenate([[1.0, 0.5], rng.normal(0.0, 0.5, size=n_features - 2)])
    y = ((x @ w + 0.5 * rng.standard_normal(n_samples)) > 0).astype(np.int64)
    return LabeledData(x=x, y=y, a=a)


def _sizes_from_proportions(props: np.ndarray, total: int) -> np.ndarray:
    raw = props * total
    sizes = np.floor(raw).astype(np.int64)
    remainder = total - int(sizes.sum())
    # Resto a los de mayor parte fraccional; empate por índice
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    return sizes


def dirichlet_partition(
    pool: LabeledData, n_clients: int, concentration: float, seed: int = 0
) -> List[ClientDataset]:
    """
    Tamaños de cliente ~ Dirichlet(concentration·1_N). La partición es exacta
    (disjunta y exhaustiva); si algún cliente queda vacío se vuelven a muestrear los pesos.
    """
    n = len(pool)
    if n == 0:
        raise DataError("El pool de muestras está vacío")
    if n < n_clients:
        raise DataError(f"El pool ({n}) es menor que el número de clientes ({n_clients})")
    if concentration <= 0:
        raise DataError("La concentración debe ser > 0")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if n_clients == 1:
        sizes = np.array([n])
    else:
        for attempt in range(MAX_DIRICHLET_DRAWS):
            props = rng.dirichlet(np.full(n_clients, concentration))
            sizes = _sizes_from_proportions(props, n)
            if np.all(sizes > 0):
                break
            logger.warning(f"Cliente vacío en el intento {attempt}; se remuestrean los pesos")
        else:
            raise DataError("No se logró una partición sin clientes vacíos")

    clients = []
    start = 0
    for k, size in enumerate(sizes):
        idx = order[start : start + size]
        start += size
        part = pool.subset(idx)
        clients.append(ClientDataset(x=part.x, y=part.y, a=part.a, client_id=k))
    return clients


def partition_pool(pool: LabeledData, spec: PartitionSpec) -> List[ClientDataset]:
    if spec.scheme != "dirichlet":
        raise DataError("Solo el esquema 'dirichlet' particiona un pool existente")
    return dirichlet_partition(pool, spec.n_clients, spec.concentration, spec.seed)


def stratified_split(
    data: LabeledData, test_fraction: float = 0.2, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Índices (train, test) estratificados por celda (y, a). Orden ascendente."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for y in (0, 1):
        for a in (0, 1):
            idx = np.flatnonzero((data.y == y) & (data.a == a))
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            n_test = int(math.floor(test_fraction * idx.size))
            test.append(idx[:n_test])
            train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def group_stats(ds: LabeledData) -> GroupStats:
    if len(ds) == 0:
        raise DataError("group_stats requiere un dataset no vacío")
    counts = {
        f"y{y}_a{a}": int(np.sum((ds.y == y) & (ds.a == a))) for y in (0, 1) for a in (0, 1)
    }
    return GroupStats(**counts)


# --- Ingesta CSV ---


def read_csv_frame(path: Union[str, Path], schema: CsvSchema) -> pd.DataFrame:
    """Lee el CSV como texto y verifica que estén todas las columnas del esquema."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise SchemaError(f"No existe el archivo CSV: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"CSV ilegible {path}: {e}")
    required = [
        schema.label_column,
        schema.attribute_column,
        *schema.numeric_columns,
        *schema.categorical_columns.keys(),
    ]
    for col in required:
        if col not in frame.columns:
            raise SchemaError(f"Falta la columna '{col}' en {path}", column=col)
    return frame


def _line_number(row_idx: int) -> int:
    # la cabecera es la línea 1
    return row_idx + 2


def _encode_binary(frame: pd.DataFrame, column: str, positive: Optional[str]) -> np.ndarray:
    values = frame[column].str.strip()
    if positive is not None:
        return (values == positive).to_numpy().astype(np.int64)
    bad = ~values.isin(["0", "1"])
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(
            f"Valor no binario '{values.iloc[row]}' en la columna '{column}' (fila {_line_number(row)})",
            row=_line_number(row),
            column=column,
        )
    return (values == "1").to_numpy().astype(np.int64)


def encode_targets(frame: pd.DataFrame, schema: CsvSchema) -> Tuple[np.ndarray, np.ndarray]:
    y = _encode_binary(frame, schema.label_column, schema.label_positive)
    a = _encode_binary(frame, schema.attribute_column, schema.attribute_positive)
    return y, a


def encode_frame(
    frame: pd.DataFrame, schema: CsvSchema, fit_rows: Optional[Sequence[int]] = None
) -> Tuple[LabeledData, NormalizationStats]:
    """
    Expansión one-hot de categóricas y z-score de numéricas con estadísticas de `fit_rows`
    (el split de entrenamiento); todas las filas si no se indica.
    """
    y, a = encode_targets(frame, schema)
    blocks: List[np.ndarray] = []
    names: List[str] = []

    for col in schema.numeric_columns:
        parsed = pd.to_numeric(frame[col].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(parsed)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise SchemaError(
                f"Celda ilegible '{frame[col].iloc[row]}' en la columna '{col}' (fila {_line_number(row)})",
                row=_line_number(row),
                column=col,
            )
        blocks.append(parsed.reshape(-1, 1))
        names.append(col)
    n_numeric = len(names)

    for col, categories in schema.categorical_columns.items():
        values = frame[col].str.strip()
        cats = list(categories) or sorted(values.unique().tolist())
        unknown = ~values.isin(cats)
        if unknown.any():
            row = int(np.flatnonzero(unknown.to_numpy())[0])
            raise SchemaError(
                f"Categoría desconocida '{values.iloc[row]}' en '{col}' (fila {_line_number(row)})",
                row=_line_number(row),
                column=col,
            )
        for cat in cats:
            blocks.append((values == cat).to_numpy(dtype=np.float64).reshape(-1, 1))
            names.append(f"{col}={cat}")

    n_rows = len(frame)
    x = np.concatenate(blocks, axis=1) if blocks else np.zeros((n_rows, 0))
    rows = np.arange(n_rows) if fit_rows is None else np.asarray(fit_rows, dtype=np.int64)
    mean = np.zeros(x.shape[1])
    std = np.ones(x.shape[1])
    if n_numeric and rows.size:
        mean[:n_numeric] = x[rows, :n_numeric].mean(axis=0)
        std[:n_numeric] = np.maximum(x[rows, :n_numeric].std(axis=0), STD_FLOOR)
    x = (x - mean) / std
    return LabeledData(x=x, y=y, a=a), NormalizationStats(mean=mean, std=std, feature_names=names)


def ingest_csv(
    path: Union[str, Path], schema: CsvSchema, fit_rows: Optional[Sequence[int]] = None
) -> LabeledData:
    """Lee y codifica un CSV tabular preservando el orden de las filas."""
    frame = read_csv_frame(path, schema)
    data, stats = encode_frame(frame, schema, fit_rows=fit_rows)
    logger.info(f"CSV {path}: {len(data)} filas, {len(stats.feature_names)} features")
    return data


def load_csv_split(
    path: Union[str, Path], schema: CsvSchema, test_fraction: float, seed: int
) -> Tuple[LabeledData, LabeledData]:
    """Split 80/20 estratificado por (y, a); normaliza con estadísticas del train."""
    frame = read_csv_frame(path, schema)
    y, a = encode_targets(frame, schema)
    placeholder = LabeledData(x=np.zeros((len(frame), 1)), y=y, a=a)
    train_idx, test_idx = stratified_split(placeholder, test_fraction, seed)
    data, _ = encode_frame(frame, schema, fit_rows=train_idx)
    return data.subset(train_idx), data.subset(test_idx)
