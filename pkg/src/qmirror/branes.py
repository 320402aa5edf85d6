"""Brane linking-number combinatorics for framed A_r quivers.

A quiver (v, w) is read as a Hanany-Witten arrangement: n+1 NS5 branes
with the gauge ranks counting D3 segments, and w_i D5 branes between
NS5_i and NS5_{i+1}.  Linking numbers are exact integers; the mirror dual
swaps the two partitions and rebuilds labels by the inverse recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import InvalidArgument, InvalidQuiver, NotRealizable, Quiver


@dataclass(frozen=True)
class Partition:
    """Nonincreasing positive parts."""

    parts: tuple[int, ...]

    def __post_init__(self):
        parts = tuple(int(p) for p in self.parts)
        object.__setattr__(self, "parts", parts)
        if any(p <= 0 for p in parts):
            raise InvalidArgument("partition parts must be positive")
        if any(parts[i] < parts[i + 1] for i in range(len(parts) - 1)):
            raise InvalidArgument("partition parts must be nonincreasing")

    @property
    def size(self) -> int:
        return sum(self.parts)

    def __len__(self) -> int:
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)


@dataclass(frozen=True)
class LinkingData:
    ns5: Partition
    d5: Partition
    ns5_by_position: tuple[int, ...]

    def __post_init__(self):
        if self.ns5.size != self.d5.size:
            raise InvalidQuiver("NS5 and D5 linking totals differ")


def linking_numbers(q: Quiver) -> LinkingData:
    """Positional NS5 numbers l_i = v_i - v_{i-1} + sum_{a<i} w_a for
    i = 1..n+1, and the D5 multiset with w_i copies of (n+1-i).

    A quiver need not be in convex (ascending) form; the only hard
    requirement is that every NS5 brane ends a positive number of
    D3+D5 strands, i.e. every positional number is >= 1.
    """
    n = q.n
    pos = []
    acc_w = 0
    for i in range(1, n + 2):
        pos.append(q.vpad(i) - q.vpad(i - 1) + acc_w)
        if i <= n:
            acc_w += q.w[i - 1]
    bad = [i + 1 for i, p in enumerate(pos) if p <= 0]
    if bad:
        raise InvalidQuiver(f"nonpositive NS5 linking number at position(s) {bad}")
    d5_list: list[int] = []
    for i in range(1, n + 1):
        d5_list.extend([n + 1 - i] * q.w[i - 1])
    ns5 = Partition(tuple(sorted(pos, reverse=True)))
    d5 = Partition(tuple(sorted(d5_list, reverse=True)))
    return LinkingData(ns5=ns5, d5=d5, ns5_by_position=tuple(pos))


def _rebuild(ns5_parts: tuple[int, ...], d5_parts: tuple[int, ...]) -> Quiver:
    """Invert the linking recursion: place the NS5 parts in ascending
    positional order and solve for the ranks; must close at zero."""
    m = len(ns5_parts)                  # number of NS5 branes = n + 1
    if m < 2:
        raise NotRealizable("dual quiver needs at least two NS5 branes")
    n = m - 1
    w = [0] * n
    for part in d5_parts:
        i = n + 1 - part                # w_i counts parts equal to n+1-i
        if not 1 <= i <= n:
            raise NotRealizable(f"D5 linking number {part} out of range")
        w[i - 1] += 1
    placement = sorted(ns5_parts)
    v = []
    acc_w = 0
    prev = 0
    for i in range(1, m + 1):
        cur = prev + placement[i - 1] - acc_w
        if i <= n:
            if cur <= 0:
                raise NotRealizable(f"rank {cur} at node {i} in reconstruction")
            v.append(cur)
            acc_w += w[i - 1]
        else:
            if cur != 0:
                raise NotRealizable("rank recursion does not close at zero")
        prev = cur
    return Quiver(tuple(v), tuple(w))


def mirror_dual(q: Quiver) -> Quiver:
    """Swap the NS5/D5 linking partitions and rebuild quiver labels.

    The swapped NS5 parts are placed in ascending positional order (the
    canonical representative); ranks follow from inverting the linking
    recursion and must close at zero.
    """
    data = linking_numbers(q)
    return _rebuild(data.d5.parts, data.ns5.parts)


def ascending_form(q: Quiver) -> Quiver:
    """Canonical representative with the same linking data and
    nondecreasing positional NS5 numbers (double mirror lands here)."""
    data = linking_numbers(q)
    return _rebuild(data.ns5.parts, data.d5.parts)


def backlund_labels(q: Quiver, i: int) -> Quiver:
    """Affine reflection at node i: v_i -> v_{i-1} + v_{i+1} + w_i - v_i."""
    if not 1 <= i <= q.n:
        raise InvalidArgument(f"node index {i} out of range")
    new_vi = q.vpad(i - 1) + q.vpad(i + 1) + q.w[i - 1] - q.v[i - 1]
    if new_vi <= 0:
        raise NotRealizable(f"reflection at node {i} gives rank {new_vi}")
    v = list(q.v)
    v[i - 1] = new_vi
    return Quiver(tuple(v), q.w)


def section_degrees(q: Quiver) -> tuple[int, ...]:
    """Degrees rho_1..rho_{n+1} of the oper section components:
    rho_i = v_{i-1} - v_i + sum_{a>=i} w_a.

    As a multiset this equals ns5 of the reflected quiver; in fact it is
    the reflected positional sequence read back-to-front.
    """
    n = q.n
    degs = []
    for i in range(1, n + 2):
        degs.append(q.vpad(i - 1) - q.vpad(i) + sum(q.w[i - 1:]))
    if any(d <= 0 for d in degs):
        raise InvalidQuiver(f"nonpositive section degree in {degs}")
    # difference identity and boundary value are structural; assert them
    for i in range(1, n + 1):
        assert degs[i - 1] - degs[i] == q.w[i - 1] + q.vpad(i - 1) + q.vpad(i + 1) - 2 * q.v[i - 1]
    assert degs[n] == q.v[n - 1]
    return tuple(degs)


# -- named families ----------------------------------------------------------


def full_flag(n: int) -> Quiver:
    """Cotangent bundle of the complete flag variety in C^n."""
    if n < 2:
        raise InvalidArgument("full flag needs n >= 2")
    v = tuple(range(1, n))
    w = (0,) * (n - 2) + (n,)
    return Quiver(v, w)


def grassmannian(k: int, n: int) -> Quiver:
    """T*Gr(k, n): one node, v = (k), w = (n)."""
    if not 1 <= k < n:
        raise InvalidArgument("need 1 <= k < n")
    return Quiver((k,), (n,))


def xkl(k: int, l: int, ascending: bool = True) -> Quiver:
    """The self-dual X_{k,l} family: ranks rise 1..k then plateau at k for
    l-1 more nodes; one-dimensional framing on nodes k..k+l-2 and a
    (k+1)-fold framing on the last node.

    ascending=False returns the reflected labels (used where the section
    degrees are wanted in their small normal form).
    """
    if k < 1 or l < 2:
        raise InvalidArgument("need k >= 1 and l >= 2")
    v = tuple(range(1, k + 1)) + (k,) * (l - 1)  # k + l - 1 nodes
    w = [0] * len(v)
    for node in range(k, k + l - 1):
        w[node - 1] += 1
    w[-1] += k + 1
    q = Quiver(v, tuple(w))
    return q if ascending else q.reflected()
