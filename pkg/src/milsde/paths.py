"""Driving paths on a nested pair of grids.

The unit interval is split into ``coarse_n`` cells, each refined into
``fine_factor`` sub-cells.  All stochastic integrals in the package are
left-point sums over the fine grid, with integrands anchored at the coarse
cell containing each fine cell.  At a coarse grid point the anchor jumps
back a full coarse cell (left-open convention), so the anchor of the point
``t_k`` equals the anchor of the fine cell ending at ``t_k``.

Paths are generated per path index from splittable streams; a path's values
depend only on (master_seed, path_index), never on batch composition.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng

MAX_FINE_COUNT = 1 << 26  # allocation guard for index arithmetic and arrays


@dataclass(frozen=True)
class Grid:
    """Coarse/fine subdivision of the fixed horizon [0, 1]."""

    coarse_n: int
    fine_factor: int

    def __post_init__(self):
        if self.coarse_n < 1 or self.fine_factor < 1:
            raise ValueError("coarse_n and fine_factor must be >= 1")
        if self.coarse_n * self.fine_factor > MAX_FINE_COUNT:
            raise ValueError(f"grid of {self.coarse_n}x{self.fine_factor} cells is too large")

    @property
    def fine_count(self) -> int:
        return self.coarse_n * self.fine_factor

    @property
    def fine_dt(self) -> float:
        return 1.0 / self.fine_count

    def times(self) -> np.ndarray:
        # k/fine_count from index arithmetic; never an accumulated float sum
        return np.arange(self.fine_count + 1) / self.fine_count

    def time_of(self, fine_index: int) -> float:
        return fine_index / self.fine_count

    def coarse_indices(self) -> np.ndarray:
        """Fine indices of the coarse grid points."""
        return np.arange(self.coarse_n + 1) * self.fine_factor


def make_grid(coarse_n: int, fine_factor: int) -> Grid:
    return Grid(int(coarse_n), int(fine_factor))


def coarse_anchor(grid: Grid, fine_index: int) -> int:
    """Fine index of the coarse anchor of the point ``t_{fine_index}``.

    Greatest coarse-point index strictly below ``fine_index`` (left-open
    convention), except that the origin anchors to itself.
    """
    if fine_index < 0 or fine_index > grid.fine_count:
        raise ValueError(f"fine index {fine_index} outside 0..{grid.fine_count}")
    if fine_index == 0:
        return 0
    return ((fine_index - 1) // grid.fine_factor) * grid.fine_factor


def cell_anchors(grid: Grid) -> np.ndarray:
    """Anchor fine-index for every fine cell.

    Entry ``j`` anchors the cell (t_j, t_{j+1}]; it equals
    ``coarse_anchor(grid, j + 1)``.  Left-point integrands on cell ``j`` are
    evaluated as ``path[j] - path[anchor[j]]``.
    """
    j = np.arange(grid.fine_count)
    return (j // grid.fine_factor) * grid.fine_factor


def subgrid_anchors(grid: Grid, coarse_n: int) -> np.ndarray:
    """Anchors of fine cells relative to a coarser subdivision into ``coarse_n``.

    ``coarse_n`` must divide the fine count.  Used to evaluate functionals at
    several coarsenesses on one bundle.
    """
    if grid.fine_count % coarse_n:
        raise ValueError(f"{coarse_n} does not divide fine grid of {grid.fine_count}")
    r = grid.fine_count // coarse_n
    j = np.arange(grid.fine_count)
    return (j // r) * r


@dataclass(frozen=True)
class DriverSpec:
    """Driving semimartingale as coefficient data.

    ``sigma`` maps time to the (dim_d, dim_m) volatility matrix; ``drift``
    maps time to the dim_d drift vector.  Either may be given as a constant
    array, and ``drift`` may be None for a local martingale driver.  The
    instantaneous covariance is c_s = sigma_s sigma_s^T.
    """

    dim_d: int
    dim_m: int
    sigma: object  # ndarray (d, m) or callable s -> ndarray (d, m)
    drift: object = None  # None, ndarray (d,) or callable s -> ndarray (d,)
    label: str = ""

    def __post_init__(self):
        if self.dim_d < 1 or self.dim_m < 1:
            raise ValueError("driver dimensions must be >= 1")
        if not callable(self.sigma) and \
                np.asarray(self.sigma).shape != (self.dim_d, self.dim_m):
            raise ValueError(f"constant sigma must have shape ({self.dim_d}, {self.dim_m})")
        if self.drift is not None and not callable(self.drift) and \
                np.asarray(self.drift).shape != (self.dim_d,):
            raise ValueError(f"constant drift must have shape ({self.dim_d},)")
        s = self.sigma_at(np.linspace(0.0, 1.0, 17))
        if s.shape[1:] != (self.dim_d, self.dim_m):
            raise ValueError(f"sigma must produce ({self.dim_d}, {self.dim_m}) matrices")
        c = np.einsum("tim,tjm->tij", s, s)
        eig = np.linalg.eigvalsh(c)
        if eig.min() < -1e-12:
            raise ValueError("sigma sigma^T must be positive semidefinite")
        # integrability gates on [0,1], checked on a sample for deterministic
        # coefficients: int ||c||^3 ds and int ||a||^2 ds finite
        if not np.isfinite(np.linalg.norm(c, axis=(1, 2)) ** 3).all():
            raise ValueError("int ||c_s||^3 ds diverges on [0,1]")
        a = self.drift_at(np.linspace(0.0, 1.0, 17))
        if not np.isfinite(a).all():
            raise ValueError("int ||a_s||^2 ds diverges on [0,1]")

    def sigma_at(self, times: np.ndarray) -> np.ndarray:
        """Volatility matrices at the given times, shape (T, d, m)."""
        times = np.asarray(times, dtype=float)
        if callable(self.sigma):
            out = np.stack([np.asarray(self.sigma(t), dtype=float) for t in times])
        else:
            out = np.broadcast_to(np.asarray(self.sigma, dtype=float),
                                  (len(times), self.dim_d, self.dim_m)).copy()
        return out.reshape(len(times), self.dim_d, self.dim_m)

    def drift_at(self, times: np.ndarray) -> np.ndarray:
        """Drift vectors at the given times, shape (T, d)."""
        times = np.asarray(times, dtype=float)
        if self.drift is None:
            return np.zeros((len(times), self.dim_d))
        if callable(self.drift):
            out = np.stack([np.asarray(self.drift(t), dtype=float) for t in times])
        else:
            out = np.broadcast_to(np.asarray(self.drift, dtype=float),
                                  (len(times), self.dim_d)).copy()
        return out.reshape(len(times), self.dim_d)

    def c_at(self, times: np.ndarray) -> np.ndarray:
        s = self.sigma_at(times)
        return np.einsum("tim,tjm->tij", s, s)

    @property
    def has_drift(self) -> bool:
        if self.drift is None:
            return False
        if callable(self.drift):
            return True
        return bool(np.any(np.asarray(self.drift) != 0.0))

    def cell_qv(self, edges: np.ndarray) -> np.ndarray:
        """Exact quadratic variation of the martingale part per cell.

        Integrates c_s over each interval [edges[k], edges[k+1]] with an
        8-node Gauss-Legendre rule (exact for constant sigma, and for
        polynomial c of degree <= 15).  Shape (len(edges)-1, d, d).
        """
        edges = np.asarray(edges, dtype=float)
        nodes, weights = np.polynomial.legendre.leggauss(8)
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        qv = np.zeros((len(lo), self.dim_d, self.dim_d))
        for x, wgt in zip(nodes, weights):
            t = mid + half * x
            qv += wgt * half[:, None, None] * self.c_at(t)
        return qv


def brownian_motion_driver(dim: int = 1, label: str = "bm") -> DriverSpec:
    """Standard d-dimensional Brownian driver (sigma = identity, no drift)."""
    return DriverSpec(dim_d=dim, dim_m=dim, sigma=np.eye(dim), label=label)


def time_driver(label: str = "time") -> DriverSpec:
    """Deterministic finite-variation driver Y_t = t."""
    return DriverSpec(dim_d=1, dim_m=1, sigma=np.zeros((1, 1)),
                      drift=np.ones(1), label=label)


def ito_embedding_driver(label: str = "ito-embed") -> DriverSpec:
    """The (W, t) pair as a two-component semimartingale driver."""
    return DriverSpec(dim_d=2, dim_m=1, sigma=np.array([[1.0], [0.0]]),
                      drift=np.array([0.0, 1.0]), label=label)


@dataclass(frozen=True)
class PathBundle:
    """Coupled batch of driving paths on one grid.

    Arrays carry a leading path axis: ``w`` is (n_paths, fine_count+1, m),
    ``y`` and ``a_int`` are (n_paths, fine_count+1, d).  A bundle is
    immutable after construction; every scheme and functional evaluated on
    it reads the same realizations, which is the coupling contract.
    """

    grid: Grid
    driver: DriverSpec
    w: np.ndarray
    y: np.ndarray
    a_int: np.ndarray
    master_seed: int
    path_indices: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return self.w.shape[0]

    def fine_increments(self) -> np.ndarray:
        """Driver increments over fine cells, shape (n_paths, fine_count, d)."""
        return np.diff(self.y, axis=1)

    def path(self, i: int) -> "PathBundle":
        """Single-path view (no copy)."""
        return PathBundle(self.grid, self.driver, self.w[i:i + 1], self.y[i:i + 1],
                          self.a_int[i:i + 1], self.master_seed, self.path_indices[i:i + 1])


def sample_brownian(grid: Grid, dim_m: int, seed_key: tuple) -> np.ndarray:
    """One m-dimensional Brownian path on the fine grid, W_0 = 0.

    ``seed_key`` is (master_seed, path_index); the result is bit-identical
    for equal keys regardless of scheduling.
    """
    master_seed, path_index = seed_key
    return _brownian_batch(grid, dim_m, master_seed, np.array([path_index]))[0]


def _brownian_batch(grid: Grid, dim_m: int, master_seed: int,
                    path_indices: np.ndarray, component: int = rng.DRIVER_W) -> np.ndarray:
    nf = grid.fine_count
    scale = np.sqrt(grid.fine_dt)
    out = np.empty((len(path_indices), nf + 1, dim_m))
    out[:, 0] = 0.0
    for b, idx in enumerate(path_indices):
        z = rng.normal_matrix(master_seed, component, int(idx), (nf, dim_m))
        np.cumsum(z * scale, axis=0, out=out[b, 1:])
    return out


def build_driver(spec: DriverSpec, w: np.ndarray, grid: Grid) -> tuple:
    """Assemble (y, a_int) from a Brownian path by left-point sums.

    y_k = sum_{j<k} sigma(t_j) dW_j + a_int_k with
    a_int_k = sum_{j<k} a(t_j) dt.  For constant coefficients the sums
    telescope, so they are evaluated directly on the path values (this keeps
    y bit-identical to w for the identity driver).  Accepts a single path
    (fine_count+1, m) or a batch (n_paths, fine_count+1, m).
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.shape[-1] != spec.dim_m:
        raise ValueError(f"driver expects {spec.dim_m} Brownian components, got {w.shape[-1]}")
    left_times = grid.times()[:-1]

    if callable(spec.sigma):
        sig = spec.sigma_at(left_times)
        if not np.isfinite(sig).all():
            bad = int(np.argwhere(~np.isfinite(sig).reshape(len(left_times), -1).all(axis=1))[0, 0])
            raise ValueError(f"sigma evaluated non-finite at t={left_times[bad]:g}")
        y = np.zeros((w.shape[0], grid.fine_count + 1, spec.dim_d))
        np.cumsum(np.einsum("tdm,btm->btd", sig, np.diff(w, axis=1)), axis=1, out=y[:, 1:])
    else:
        sig = np.asarray(spec.sigma, dtype=float)
        if not np.isfinite(sig).all():
            raise ValueError("sigma matrix contains non-finite entries")
        y = np.einsum("dm,bkm->bkd", sig, w)

    a_int = np.zeros((w.shape[0], grid.fine_count + 1, spec.dim_d))
    if spec.drift is not None:
        if callable(spec.drift):
            a = spec.drift_at(left_times)
            if not np.isfinite(a).all():
                bad = int(np.argwhere(~np.isfinite(a).all(axis=1))[0, 0])
                raise ValueError(f"drift evaluated non-finite at t={left_times[bad]:g}")
            np.cumsum(a * grid.fine_dt, axis=0, out=a_int[0, 1:])
            a_int[:] = a_int[0]
        else:
            a = np.asarray(spec.drift, dtype=float)
            if not np.isfinite(a).all():
                raise ValueError("drift vector contains non-finite entries")
            a_int[:] = grid.times()[:, None] * a
        y = y + a_int
    if single:
        return y[0], a_int[0]
    return y, a_int


def simulate_bundle(spec: DriverSpec, grid: Grid, master_seed: int,
                    path_indices, component: int = rng.DRIVER_W) -> PathBundle:
    """Generate a coupled batch of driver paths for the given path indices.

    ``component`` selects the stream family; limit-law draws use their own
    family so they are independent of the scheme paths under one seed.
    """
    path_indices = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    w = _brownian_batch(grid, spec.dim_m, master_seed, path_indices, component)
    y, a_int = build_driver(spec, w, grid)
    return PathBundle(grid=grid, driver=spec, w=w, y=y, a_int=a_int,
                      master_seed=master_seed, path_indices=path_indices)


def dump_paths_csv(bundle: PathBundle, fh, path_index: int = 0) -> None:
    """Write one path as CSV rows (fine_index, time, w_1..w_m, y_1..y_d)."""
    m, d = bundle.driver.dim_m, bundle.driver.dim_d
    cols = ["fine_index", "time"] + [f"w_{i+1}" for i in range(m)] + [f"y_{i+1}" for i in range(d)]
    fh.write(",".join(cols) + "\n")
    b = int(np.argwhere(bundle.path_indices == path_index)[0, 0])
    times = bundle.grid.times()
    for k in range(bundle.grid.fine_count + 1):
        row = [str(k), repr(float(times[k]))]
        row += [repr(float(v)) for v in bundle.w[b, k]]
        row += [repr(float(v)) for v in bundle.y[b, k]]
        fh.write(",".join(row) + "\n")
