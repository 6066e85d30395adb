"""Point estimation of the patient partition from a label-switching
posterior trace.

The identifiable object is the co-clustering matrix (posterior pair
probabilities).  From it, a single partition is chosen either by Dahl's
least-squares criterion over the sampled partitions or by agglomerative
clustering of the induced distance 1 - prob, with the cluster count
picked by a height cut, the posterior median count, or an internal
validity index (Silhouette, Gamma, Tau).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CoclusteringMatrix:
    """Posterior probabilities that two patients share a cluster."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("co-clustering matrix must be square")
        if not np.allclose(p, p.T):
            raise ValueError("co-clustering matrix must be symmetric")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("entries must lie in [0, 1]")
        if not np.all(np.diag(p) == 1.0):
            raise ValueError("diagonal must be exactly 1")
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    @property
    def n(self):
        return self.probs.shape[0]


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge tree in the usual linkage encoding: leaves are
    0..N-1, the i-th merge creates node N+i from (left, right) at the
    recorded height."""

    n_leaves: int
    merges: np.ndarray            # (N-1, 3) columns: left id, right id, height
    linkage: str

    def __post_init__(self):
        m = np.asarray(self.merges, dtype=float)
        if m.shape != (self.n_leaves - 1, 3):
            raise ValueError("need exactly N-1 merges")
        if self.linkage not in ("average", "ward"):
            raise ValueError("linkage must be 'average' or 'ward'")
        object.__setattr__(self, "merges", m)

    @property
    def heights(self):
        return self.merges[:, 2]


@dataclass(frozen=True)
class PartitionEstimate:
    """A fixed labeling of patients into clusters 1..k with provenance."""

    labels: np.ndarray
    method: str
    index_values: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        k = labels.max() if labels.size else 0
        present = np.unique(labels)
        if labels.size and (present[0] != 1 or present.size != k):
            raise ValueError("labels must cover 1..k with no gaps")
        object.__setattr__(self, "labels", labels)

    @property
    def n_clusters(self):
        return int(self.labels.max()) if self.labels.size else 0


METHODS = ("dahl", "avg-h", "avg-K", "avg-silhouette", "avg-gamma", "avg-tau",
           "ward-K", "ward-silhouette", "ward-gamma", "ward-tau")


def _as_probs(M):
    return np.asarray(getattr(M, "probs", M), dtype=float)


def _canonical_labels(raw):
    """Relabel clusters 1..k in order of first appearance."""
    raw = np.asarray(raw)
    out = np.zeros(raw.size, dtype=np.intp)
    mapping = {}
    for i, r in enumerate(raw):
        if r not in mapping:
            mapping[r] = len(mapping) + 1
        out[i] = mapping[r]
    return out


def coclustering(trace):
    """Fraction of retained draws assigning each pair to one cluster."""
    draws = trace.draws if hasattr(trace, "draws") else list(trace)
    if len(draws) == 0:
        raise ValueError("empty trace")
    first = np.asarray(getattr(draws[0], "assignments", draws[0]))
    n = first.size
    acc = np.zeros((n, n))
    for d in draws:
        a = np.asarray(getattr(d, "assignments", d))
        acc += a[:, None] == a[None, :]
    probs = acc / len(draws)
    np.fill_diagonal(probs, 1.0)
    return CoclusteringMatrix(probs)


def dahl_partition(trace, M=None):
    """The sampled partition minimizing the squared deviation of its
    pair-indicator matrix from the co-clustering matrix (all ordered
    pairs, diagonal included); ties resolve to the earliest draw."""
    draws = trace.draws if hasattr(trace, "draws") else list(trace)
    if len(draws) == 0:
        raise ValueError("empty trace")
    probs = _as_probs(M if M is not None else coclustering(trace))
    best_loss, best_a = np.inf, None
    for d in draws:
        a = np.asarray(getattr(d, "assignments", d))
        ind = (a[:, None] == a[None, :]).astype(float)
        loss = float(((ind - probs) ** 2).sum())
        if loss < best_loss:                 # strict: earliest draw wins ties
            best_loss, best_a = loss, a
    return PartitionEstimate(labels=_canonical_labels(best_a), method="dahl",
                             index_values={"loss": best_loss})


def agglomerate(M, linkage="average"):
    """Naive O(N^3) agglomerative clustering of the distance 1 - probs.

    Average linkage merges at the mean inter-cluster distance; Ward uses
    the Lance-Williams update on squared dissimilarities (the D2
    convention) and records the square root as the height.  Ties break
    on the lexicographically smallest pair of active cluster ids.
    """
    probs = _as_probs(M)
    n = probs.shape[0]
    if n < 2:
        raise ValueError("need at least two patients")
    if linkage not in ("average", "ward"):
        raise ValueError("linkage must be 'average' or 'ward'")
    dist = 1.0 - probs
    if linkage == "ward":
        dist = dist ** 2            # Lance-Williams runs on squared distances
    D = dist.copy()
    np.fill_diagonal(D, np.inf)
    # row index of a cluster is its smallest original leaf index; argmin on
    # the upper triangle then breaks ties lexicographically on those indices
    upper_only = np.where(np.tril(np.ones((n, n), dtype=bool)), np.inf, 0.0)
    node_of = np.arange(n)
    sizes = np.ones(n)
    merges = np.empty((n - 1, 3))

    for step in range(n - 1):
        flat = np.argmin(D + upper_only)
        i, j = divmod(int(flat), n)
        d = D[i, j]
        si, sj = sizes[i], sizes[j]
        height = np.sqrt(d) if linkage == "ward" else d
        merges[step] = (node_of[i], node_of[j], height)
        # Lance-Williams update of every distance to the merged cluster;
        # inactive entries stay +inf through the arithmetic
        if linkage == "average":
            new_row = (si * D[i] + sj * D[j]) / (si + sj)
        else:
            new_row = ((si + sizes) * D[i] + (sj + sizes) * D[j] - sizes * d) \
                / (si + sj + sizes)
        new_row[i] = np.inf
        new_row[j] = np.inf
        D[i] = new_row
        D[:, i] = new_row
        D[j] = np.inf
        D[:, j] = np.inf
        sizes[i] = si + sj
        node_of[i] = n + step
    return Dendrogram(n_leaves=n, merges=merges, linkage=linkage)


def _cut_merges(dendro, n_merges, method, index_values=None):
    """Partition from applying the first ``n_merges`` merges."""
    n = dendro.n_leaves
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step in range(n_merges):
        left, right, _ = dendro.merges[step]
        node = n + step
        parent[find(int(left))] = node
        parent[find(int(right))] = node
    roots = [find(i) for i in range(n)]
    return PartitionEstimate(labels=_canonical_labels(roots), method=method,
                             index_values=index_values or {})


def cut_height(dendro, h, method="avg-h"):
    """Clusters left after removing merges above height h.

    Only meaningful for average linkage, whose heights are average
    pairwise clustering improbabilities; Ward heights are rejected.
    """
    if dendro.linkage != "average":
        raise ValueError("height cuts apply to average-linkage trees only")
    n_merges = int(np.sum(dendro.heights <= h))
    return _cut_merges(dendro, n_merges, method, {"h": float(h)})


def cut_k(dendro, k, method="cut-k"):
    """Partition with exactly k clusters (undo the last k-1 merges)."""
    n = dendro.n_leaves
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in 1..{n}")
    return _cut_merges(dendro, n - k, method, {"k": int(k)})


def _pair_distance_split(M, labels):
    """Within-pair and between-pair distances of d = 1 - probs."""
    probs = _as_probs(M)
    labels = np.asarray(labels)
    iu = np.triu_indices(probs.shape[0], k=1)
    d = 1.0 - probs[iu]
    same = labels[iu[0]] == labels[iu[1]]
    return d[same], d[~same]


def silhouette_index(M, labels):
    """Mean silhouette width of the partition under d = 1 - probs.

    Singleton clusters contribute zero (Rousseeuw's convention).
    """
    probs = _as_probs(M)
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if ids.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    d = 1.0 - probs
    n = labels.size
    s = np.zeros(n)
    members = {c: np.flatnonzero(labels == c) for c in ids}
    for i in range(n):
        own = members[labels[i]]
        if own.size == 1:
            continue
        a = d[i, own].sum() / (own.size - 1)    # excludes self (d_ii = 0)
        b = min(d[i, members[c]].mean() for c in ids if c != labels[i])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(s.mean())


def _concordance_counts(M, labels):
    """(s_plus, s_minus, ties) over all within x between comparisons."""
    within, between = _pair_distance_split(M, labels)
    if within.size == 0 or between.size == 0:
        raise ValueError("need both within- and between-cluster pairs")
    b_sorted = np.sort(between)
    lo = np.searchsorted(b_sorted, within, side="left")
    hi = np.searchsorted(b_sorted, within, side="right")
    s_plus = float((between.size - hi).sum())    # d_within < d_between
    s_minus = float(lo.sum())                    # d_within > d_between
    ties = float((hi - lo).sum())
    return s_plus, s_minus, ties


def gamma_index(M, labels):
    """Goodman-Kruskal style concordance: (s+ - s-) / (s+ + s-); defined
    0 when every comparison ties."""
    s_plus, s_minus, _ = _concordance_counts(M, labels)
    denom = s_plus + s_minus
    return 0.0 if denom == 0 else float((s_plus - s_minus) / denom)


def tau_index(M, labels):
    """Kendall-style concordance normalized by the number of distance
    pairs: (s+ - s-) / sqrt((Nd(Nd-1)/2 - t) * Nd(Nd-1)/2), with Nd the
    number of patient pairs and t the tied comparisons; defined 0 when
    the denominator vanishes."""
    probs = _as_probs(M)
    s_plus, s_minus, ties = _concordance_counts(M, labels)
    n = probs.shape[0]
    n_d = n * (n - 1) / 2.0
    pairs_of_pairs = n_d * (n_d - 1) / 2.0
    denom = (pairs_of_pairs - ties) * pairs_of_pairs
    if denom <= 0:
        return 0.0
    return float((s_plus - s_minus) / np.sqrt(denom))


_INDEX_FUNCS = {"silhouette": silhouette_index, "gamma": gamma_index,
                "tau": tau_index}


def posterior_median_clusters(trace):
    """Posterior median of the per-draw nonempty-cluster count."""
    draws = trace.draws if hasattr(trace, "draws") else list(trace)
    counts = [np.unique(np.asarray(getattr(d, "assignments", d))).size
              for d in draws]
    return int(np.floor(np.median(counts) + 0.5))


def select_partition(trace, method="avg-h", h=0.75, k_max=None, M=None):
    """Estimate a partition from a trace by the requested method.

    ``dahl`` minimizes the co-clustering loss over sampled partitions;
    ``avg-h`` cuts the average-linkage tree at height h; ``avg-K`` and
    ``ward-K`` cut at the posterior median cluster count; the index
    variants scan k = 2..k_max and keep the argmax (ties never arise in
    exact arithmetic but resolve to the smaller k).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    M = M if M is not None else coclustering(trace)
    if method == "dahl":
        return dahl_partition(trace, M)
    linkage = "average" if method.startswith("avg") else "ward"
    dendro = agglomerate(M, linkage)
    n = dendro.n_leaves
    if method == "avg-h":
        return cut_height(dendro, h)
    if method in ("avg-K", "ward-K"):
        k = min(max(posterior_median_clusters(trace), 1), n)
        return cut_k(dendro, k, method=method)
    index_name = method.split("-", 1)[1]
    score = _INDEX_FUNCS[index_name]
    k_max = min(n - 1, 15) if k_max is None else min(k_max, n)
    best_k, best_val, values = None, -np.inf, {}
    for k in range(2, k_max + 1):
        part = cut_k(dendro, k)
        val = score(M, part.labels)
        values[k] = val
        if val > best_val + 1e-15:
            best_val, best_k = val, k
    part = cut_k(dendro, best_k, method=method)
    return PartitionEstimate(labels=part.labels, method=method,
                             index_values=values)
