"""Core data containers: parameters, latent vectors, clustered datasets."""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError

__all__ = ["FixedParams", "LatentVector", "ClusteredDataset", "HEval", "BartlettDiagnostic"]


@dataclass
class FixedParams:
    """Fixed unknowns: regression coefficients plus named dispersions.

    Dispersion entries must be strictly positive except ``rho`` which lies in
    (-1, 1).
    """

    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dispersions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        for name, value in self.dispersions.items():
            value = float(value)
            if name == "rho":
                if not -1.0 < value < 1.0:
                    raise DomainError(f"rho must be in (-1, 1), got {value}")
            elif not value > 0.0:
                raise DomainError(f"dispersion {name!r} must be positive, got {value}")
            self.dispersions[name] = value

    def __getitem__(self, name):
        return self.dispersions[name]

    def replace(self, **kwargs):
        disp = dict(self.dispersions)
        beta = kwargs.pop("beta", self.beta)
        disp.update(kwargs)
        return FixedParams(beta=np.array(beta, dtype=np.float64), dispersions=disp)


@dataclass
class LatentVector:
    """Random unknowns on a declared scale ('v', 'u', or 'canonical')."""

    values: np.ndarray
    scale: str = "v"

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if self.scale not in ("v", "u", "canonical"):
            raise DomainError(f"unknown latent scale {self.scale!r}")
        if self.scale == "u" and np.any(self.values <= 0.0):
            raise DomainError("u-scale latent values must be strictly positive")

    def __len__(self):
        return self.values.shape[0]


class ClusteredDataset:
    """Observations grouped into clusters, each with a covariate matrix.

    Internally also keeps stacked arrays (X, y, cluster index) since most of
    the likelihood code works on those.
    """

    def __init__(self, clusters, response_kind="continuous"):
        if response_kind not in ("continuous", "count"):
            raise DomainError(f"unknown response kind {response_kind!r}")
        if not clusters:
            raise DomainError("dataset needs at least one cluster")
        self.response_kind = response_kind
        self.clusters = []
        p = None
        for k, (X, y) in enumerate(clusters):
            X = np.atleast_2d(np.asarray(X, dtype=np.float64))
            y = np.atleast_1d(np.asarray(y, dtype=np.float64))
            if y.shape[0] == 0:
                raise DomainError(f"cluster {k} is empty")
            if X.shape[0] != y.shape[0]:
                raise DomainError(f"cluster {k}: {X.shape[0]} covariate rows vs {y.shape[0]} responses")
            if p is None:
                p = X.shape[1]
            elif X.shape[1] != p:
                raise DomainError(f"cluster {k}: covariate dimension {X.shape[1]} != {p}")
            if response_kind == "count":
                if np.any(y < 0) or np.any(y != np.floor(y)):
                    raise DomainError(f"cluster {k}: count responses must be nonnegative integers")
            self.clusters.append((X, y))
        self.p = p
        self.sizes = np.array([y.shape[0] for _, y in self.clusters], dtype=np.int64)
        self.X = np.vstack([X for X, _ in self.clusters]) if p > 0 else \
            np.zeros((int(self.sizes.sum()), 0))
        self.y = np.concatenate([y for _, y in self.clusters])
        self.index = np.repeat(np.arange(len(self.clusters)), self.sizes)

    @property
    def n_clusters(self):
        return len(self.clusters)

    @property
    def n_obs(self):
        return self.y.shape[0]

    def cluster_sums(self, values):
        """Per-cluster sums of an observation-level array."""
        return np.bincount(self.index, weights=values, minlength=self.n_clusters)

    @classmethod
    def from_arrays(cls, X, y, cluster_ids, response_kind="continuous"):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        order = {}
        for cid in cluster_ids:
            if cid not in order:
                order[cid] = len(order)
        clusters = []
        ids = np.asarray([order[c] for c in cluster_ids])
        for k in range(len(order)):
            sel = ids == k
            clusters.append((X[sel], y[sel]))
        return cls(clusters, response_kind=response_kind)

    # -- CSV schema: header "cluster,y,x1,...,xp"; clusters in first-occurrence order

    @classmethod
    def from_csv(cls, path_or_buffer, response_kind="continuous"):
        if hasattr(path_or_buffer, "read"):
            return cls._parse_csv(path_or_buffer, response_kind)
        with open(path_or_buffer, newline="") as fh:
            return cls._parse_csv(fh, response_kind)

    @classmethod
    def _parse_csv(cls, fh, response_kind):
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file", line=1)
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "cluster" or header[1] != "y":
            raise DataError("header must be 'cluster,y,x1,...'", line=1)
        p = len(header) - 2
        ids, ys, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != p + 2:
                raise DataError(f"expected {p + 2} fields, got {len(row)}", line=lineno)
            ids.append(row[0].strip())
            try:
                ys.append(float(row[1]))
                xs.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(str(exc), line=lineno)
        if not ys:
            raise DataError("no data rows", line=2)
        X = np.asarray(xs) if p > 0 else np.zeros((len(ys), 0))
        try:
            return cls.from_arrays(X, np.asarray(ys), ids, response_kind=response_kind)
        except DomainError as exc:
            raise DataError(str(exc))

    def to_csv(self, path_or_buffer, cluster_names=None):
        close = False
        if hasattr(path_or_buffer, "write"):
            fh = path_or_buffer
        else:
            fh = open(path_or_buffer, "w", newline="")
            close = True
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["cluster", "y"] + [f"x{j + 1}" for j in range(self.p)])
            for k, (X, y) in enumerate(self.clusters):
                name = cluster_names[k] if cluster_names else str(k)
                for i in range(y.shape[0]):
                    writer.writerow([name, repr(float(y[i]))] + [repr(float(v)) for v in X[i]])
        finally:
            if close:
                fh.close()

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


@dataclass
class HEval:
    """h-likelihood value with its score and partitioned information matrix."""

    value: float
    score: np.ndarray
    information: np.ndarray
    n_theta: int

    def __post_init__(self):
        self.score = np.asarray(self.score, dtype=np.float64)
        self.information = np.asarray(self.information, dtype=np.float64)
        d = self.score.shape[0]
        if self.information.shape != (d, d):
            raise DomainError("information shape does not match score length")

    @property
    def n_latent(self):
        return self.score.shape[0] - self.n_theta

    @property
    def info_tt(self):
        return self.information[: self.n_theta, : self.n_theta]

    @property
    def info_tv(self):
        return self.information[: self.n_theta, self.n_theta:]

    @property
    def info_vt(self):
        return self.information[self.n_theta:, : self.n_theta]

    @property
    def info_vv(self):
        return self.information[self.n_theta:, self.n_theta:]


@dataclass
class BartlettDiagnostic:
    """Monte-Carlo check of the first and second Bartlett identities."""

    mean_score: np.ndarray
    score_se: np.ndarray
    null_se: np.ndarray           # SE implied by the mean information (H0 variance)
    mean_info: np.ndarray
    second_identity_residual: np.ndarray
    second_identity_se: np.ndarray
    replications: int
    first_identity_pass: bool
    second_identity_pass: bool
    notes: str = ""
