"""Finite games in normal form and congestion form.

Payoffs of a normal-form game are stored as one dense array of shape
``(n, |A_1|, ..., |A_n|)`` in row-major joint-action order, so
``utilities[i][a]`` is ``u_i(a)``.  A congestion-form game stores
subset-valued actions plus a per-(player, resource) value table and a
per-resource congestion rule; every utility is a function of the player's
own action and the congestion vector induced by the others.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from netfp.errors import InvalidArgumentError, ResourceLimitError

TIE_TOL = 1e-12
PROB_TOL = 1e-12
DEFAULT_CAP = 10**7


def argmax_set(values, tol=TIE_TOL):
    """Indices whose value is within ``tol`` of the maximum."""
    values = np.asarray(values, dtype=float)
    return np.flatnonzero(values >= values.max() - tol)


@dataclass(frozen=True, eq=False)
class NormalFormGame:
    """Dense normal-form game; ``utilities`` has shape ``(n, *action_counts)``."""

    utilities: np.ndarray

    def __post_init__(self):
        u = np.array(self.utilities, dtype=float)
        if u.ndim < 2 or u.shape[0] != u.ndim - 1:
            raise InvalidArgumentError(
                f"utilities must have shape (n, |A_1|, ..., |A_n|); got {u.shape}"
            )
        if any(c < 1 for c in u.shape[1:]):
            raise InvalidArgumentError("every player needs at least one action")
        if not np.all(np.isfinite(u)):
            raise InvalidArgumentError("utilities must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "utilities", u)

    @classmethod
    def from_flat(cls, n, action_counts, utilities):
        counts = tuple(int(c) for c in action_counts)
        if len(counts) != n:
            raise InvalidArgumentError(f"expected {n} action counts, got {len(counts)}")
        flat = np.asarray(utilities, dtype=float)
        expected = n * int(np.prod(counts))
        if flat.size != expected:
            raise InvalidArgumentError(f"expected {expected} utilities, got {flat.size}")
        return cls(flat.reshape((n,) + counts))

    @property
    def n(self) -> int:
        return self.utilities.shape[0]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return self.utilities.shape[1:]

    @property
    def num_profiles(self) -> int:
        return int(np.prod(self.action_counts))

    @cached_property
    def own_first(self) -> tuple[np.ndarray, ...]:
        # u_i with player i's axis moved to the front; the remaining axes
        # stay in ascending player order.
        return tuple(np.moveaxis(self.utilities[i], i, 0) for i in range(self.n))

    def payoff(self, i, profile) -> float:
        return float(self.utilities[(i,) + tuple(profile)])

    def deviation_values(self, i, profile) -> np.ndarray:
        """``u_i(b, a_{-i})`` for every own action ``b``."""
        idx = list(profile)
        idx[i] = slice(None)
        return self.utilities[(i,) + tuple(idx)]

    def action_values(self, i, marginals) -> np.ndarray:
        """Expected payoff of each own action against independent marginals.

        ``marginals`` has one entry per player; entry ``i`` is ignored.  The
        vectors are not required to be distributions (estimates may not be).
        """
        res = self.own_first[i]
        for j in reversed(range(self.n)):
            if j != i:
                res = res @ marginals[j]
        return res

    def profiles(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(*(range(c) for c in self.action_counts))


@dataclass(frozen=True, eq=False)
class CongestionFormGame:
    """Congestion game with player-specific resource values.

    ``u_i(a_i, N(a_{-i})) = sum_{r in a_i} values[i, r] * rule[r, N_r(a_{-i}) + 1]``

    ``rule[r, c]`` is the per-unit factor when ``c`` players in total use
    resource ``r``.  Counts past the last column use the last column.  The
    anonymous cost form ``-sum c_r(N_r(a))`` is ``values = -1`` and
    ``rule[r, c] = c_r(c)`` (see :meth:`from_costs`).
    """

    m: int
    action_sets: tuple
    values: np.ndarray
    rule: np.ndarray
    allow_empty: bool = False
    _incidence: tuple = field(init=False, repr=False)
    _cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = int(self.m)
        if m < 1:
            raise InvalidArgumentError("need at least one resource")
        sets = tuple(
            tuple(tuple(sorted(int(r) for r in action)) for action in player_actions)
            for player_actions in self.action_sets
        )
        n = len(sets)
        if n < 1:
            raise InvalidArgumentError("need at least one player")
        for i, player_actions in enumerate(sets):
            if not player_actions:
                raise InvalidArgumentError(f"player {i} has no actions")
            for action in player_actions:
                if not action and not self.allow_empty:
                    raise InvalidArgumentError(f"player {i} has an empty action")
                if len(set(action)) != len(action):
                    raise InvalidArgumentError(f"player {i} action {action} repeats a resource")
                if any(r < 0 or r >= m for r in action):
                    raise InvalidArgumentError(f"player {i} action {action} out of range")
        values = np.array(self.values, dtype=float)
        if values.shape != (n, m):
            raise InvalidArgumentError(f"values must have shape {(n, m)}, got {values.shape}")
        rule = np.array(self.rule, dtype=float)
        if rule.ndim != 2 or rule.shape[0] != m or rule.shape[1] < n + 1:
            raise InvalidArgumentError(
                f"rule must have shape ({m}, >= {n + 1}), got {rule.shape}"
            )
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(rule))):
            raise InvalidArgumentError("values and rule must be finite")
        values.setflags(write=False)
        rule.setflags(write=False)
        incidence = []
        for player_actions in sets:
            inc = np.zeros((len(player_actions), m), dtype=np.int64)
            for k, action in enumerate(player_actions):
                inc[k, list(action)] = 1
            inc.setflags(write=False)
            incidence.append(inc)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "action_sets", sets)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rule", rule)
        object.__setattr__(self, "_incidence", tuple(incidence))
        object.__setattr__(self, "_cols", np.arange(self.m)[None, :])

    @classmethod
    def from_costs(cls, m, action_sets, cost):
        """Anonymous congestion game ``u_i = -sum_{r in a_i} c_r(N_r(a))``.

        ``cost`` is either a callable ``cost(r, k)`` or a table indexed
        ``[r, k]`` with at least ``n + 1`` columns.
        """
        n = len(action_sets)
        if callable(cost):
            table = np.array([[cost(r, k) for k in range(n + 1)] for r in range(m)], dtype=float)
        else:
            table = np.asarray(cost, dtype=float)
        return cls(m, action_sets, -np.ones((n, m)), table)

    @property
    def n(self) -> int:
        return len(self.action_sets)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.action_sets)

    @property
    def num_profiles(self) -> int:
        return int(np.prod(self.action_counts))

    def incidence(self, i) -> np.ndarray:
        """0/1 matrix of shape ``(|A_i|, m)``: row ``k`` marks action ``k``'s resources."""
        return self._incidence[i]

    def count(self, profile, exclude=None) -> np.ndarray:
        """Congestion vector of a joint action (optionally without one player)."""
        total = np.zeros(self.m, dtype=np.int64)
        for j, a_j in enumerate(profile):
            if j != exclude:
                total += self._incidence[j][a_j]
        return total

    def congestion_values(self, i, others_congestion) -> np.ndarray:
        """``u_i(b, N_{-i})`` for every own action ``b`` given the others' congestion."""
        inc = self._incidence[i]
        total = np.asarray(others_congestion)[None, :] + inc
        np.clip(total, 0, self.rule.shape[1] - 1, out=total)
        factor = self.rule[self._cols, total]
        return (inc * (self.values[i] * factor)).sum(axis=1)

    def payoff(self, i, profile) -> float:
        return float(self.congestion_values(i, self.count(profile, exclude=i))[profile[i]])

    def deviation_values(self, i, profile) -> np.ndarray:
        return self.congestion_values(i, self.count(profile, exclude=i))

    def profiles(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(*(range(c) for c in self.action_counts))


# -- mixed profiles -----------------------------------------------------------

def validate_profile(game, profile) -> list[np.ndarray]:
    """Check a mixed profile against a game and return it as float arrays."""
    if len(profile) != game.n:
        raise InvalidArgumentError(f"profile has {len(profile)} players, game has {game.n}")
    out = []
    for i, sigma in enumerate(profile):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (game.action_counts[i],):
            raise InvalidArgumentError(
                f"player {i} strategy has shape {sigma.shape}, expected ({game.action_counts[i]},)"
            )
        if np.any(sigma < 0) or abs(sigma.sum() - 1.0) > PROB_TOL:
            raise InvalidArgumentError(f"player {i} strategy is not a probability vector")
        out.append(sigma)
    return out


def degenerate_profile(game, profile) -> list[np.ndarray]:
    """Mixed profile placing mass 1 on the pure joint action ``profile``."""
    out = []
    for i, a_i in enumerate(profile):
        sigma = np.zeros(game.action_counts[i])
        sigma[a_i] = 1.0
        out.append(sigma)
    return out


def _check_pure(game, profile):
    if len(profile) != game.n:
        raise InvalidArgumentError(f"profile has {len(profile)} players, game has {game.n}")
    for i, a_i in enumerate(profile):
        if not 0 <= a_i < game.action_counts[i]:
            raise InvalidArgumentError(f"action {a_i} out of range for player {i}")
    return tuple(int(a) for a in profile)


def expected_utility(game: NormalFormGame, i: int, profile) -> float:
    """Expected payoff of player ``i`` under an independent mixed profile."""
    sigma = validate_profile(game, profile)
    if all(np.count_nonzero(s) == 1 and s.max() == 1.0 for s in sigma):
        # exact on degenerate profiles: no floating multiply-adds
        return game.payoff(i, tuple(int(np.argmax(s)) for s in sigma))
    return float(game.action_values(i, sigma) @ sigma[i])


def best_response_set(game: NormalFormGame, i: int, opponents) -> frozenset[int]:
    """Pure maximizers of player ``i``'s expected payoff against ``opponents``.

    ``opponents`` lists the other players' marginals, either with ``n - 1``
    entries or with ``n`` entries where entry ``i`` is ignored.
    """
    opponents = list(opponents)
    if len(opponents) == game.n - 1:
        opponents.insert(i, None)
    if len(opponents) != game.n:
        raise InvalidArgumentError("opponent marginals do not match the player count")
    full = list(opponents)
    full[i] = np.full(game.action_counts[i], 1.0 / game.action_counts[i])
    full = validate_profile(game, full)
    return frozenset(int(b) for b in argmax_set(game.action_values(i, full)))


def is_pure_nash(game, profile) -> bool:
    profile = _check_pure(game, profile)
    for i in range(game.n):
        vals = game.deviation_values(i, profile)
        if vals[profile[i]] < vals.max() - TIE_TOL:
            return False
    return True


def is_strict_pure_nash(game, profile) -> bool:
    profile = _check_pure(game, profile)
    for i in range(game.n):
        br = argmax_set(game.deviation_values(i, profile))
        if len(br) != 1 or br[0] != profile[i]:
            return False
    return True


def _as_normal_form(game, cap):
    if isinstance(game, CongestionFormGame):
        return to_normal_form(game, cap=cap)
    if game.num_profiles > cap:
        raise ResourceLimitError(f"{game.num_profiles} joint actions exceed cap {cap}")
    return game


def _best_response_masks(game: NormalFormGame) -> list[np.ndarray]:
    """``masks[i][a]`` is true when ``a_i`` is a best response to ``a_{-i}``."""
    masks = []
    for i in range(game.n):
        u = game.utilities[i]
        masks.append(u >= u.max(axis=i, keepdims=True) - TIE_TOL)
    return masks


def find_pure_nash(game, cap=DEFAULT_CAP) -> list[tuple[int, ...]]:
    """All pure Nash equilibria in lexicographic order."""
    nf = _as_normal_form(game, cap)
    ne = np.logical_and.reduce(_best_response_masks(nf))
    return [tuple(int(x) for x in row) for row in np.argwhere(ne)]


def is_weakly_acyclic(game, cap=DEFAULT_CAP) -> bool:
    """Whether every joint action has a best-response path to a pure NE."""
    nf = _as_normal_form(game, cap)
    masks = _best_response_masks(nf)
    reach = np.logical_and.reduce(masks)
    if not reach.any():
        return False
    while True:
        grown = reach.copy()
        for i, mask in enumerate(masks):
            # a reaches R if some best response b of player i leads into R
            grown |= np.any(mask & reach, axis=i, keepdims=True)
        if np.array_equal(grown, reach):
            return bool(reach.all())
        reach = grown


def has_distinct_own_payoffs(game, cap=DEFAULT_CAP) -> bool:
    """Whether own-action payoffs are pairwise distinct against every ``a_{-i}``."""
    nf = _as_normal_form(game, cap)
    for i in range(nf.n):
        if nf.action_counts[i] < 2:
            continue
        srt = np.sort(nf.utilities[i], axis=i)
        if np.any(np.diff(srt, axis=i) <= TIE_TOL):
            return False
    return True


# -- congestion form ----------------------------------------------------------

def congestion_count(actions: Sequence[Iterable[int]], m: int) -> np.ndarray:
    """Number of players using each resource."""
    counts = np.zeros(m, dtype=np.int64)
    for action in actions:
        for r in action:
            if not 0 <= r < m:
                raise InvalidArgumentError(f"resource {r} out of range for m={m}")
            counts[r] += 1
    return counts


def congestion_utility(cgame: CongestionFormGame, i: int, own, others_congestion) -> float:
    """Utility of player ``i`` for resource subset ``own`` given the others' congestion."""
    others = np.asarray(others_congestion)
    if others.shape != (cgame.m,):
        raise InvalidArgumentError(f"congestion vector must have length {cgame.m}")
    if np.any(others < 0):
        raise InvalidArgumentError("congestion counts must be nonnegative")
    last = cgame.rule.shape[1] - 1
    total = 0.0
    for r in sorted(set(own)):
        c = min(int(others[r]) + 1, last)
        total += cgame.values[i, r] * cgame.rule[r, c]
    return float(total)


def to_normal_form(cgame: CongestionFormGame, cap=DEFAULT_CAP) -> NormalFormGame:
    """Dense payoff tensor of a congestion game."""
    counts = cgame.action_counts
    if cgame.num_profiles > cap:
        raise ResourceLimitError(f"{cgame.num_profiles} joint actions exceed cap {cap}")
    n, m = cgame.n, cgame.m

    def spread(i):
        # incidence of player i broadcast over the joint-action grid
        shape = [1] * n + [m]
        shape[i] = counts[i]
        return cgame.incidence(i).reshape(shape)

    congestion = sum(spread(i) for i in range(n))
    congestion = np.broadcast_to(congestion, tuple(counts) + (m,))
    idx = np.clip(congestion, 0, cgame.rule.shape[1] - 1)
    factor = cgame.rule[np.arange(m), idx]
    utilities = np.stack(
        [(spread(i) * cgame.values[i] * factor).sum(axis=-1) for i in range(n)]
    )
    return NormalFormGame(utilities)


# -- stock games ----------------------------------------------------------------

def coordination_game(k=2) -> NormalFormGame:
    """Two players, payoff 1 on the diagonal and 0 elsewhere."""
    eye = np.eye(k)
    return NormalFormGame(np.stack([eye, eye]))


def matching_pennies() -> NormalFormGame:
    u1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return NormalFormGame(np.stack([u1, -u1]))


def random_game(action_counts, rng) -> NormalFormGame:
    counts = tuple(action_counts)
    return NormalFormGame(rng.standard_normal((len(counts),) + counts))


def random_potential_game(action_counts, rng) -> NormalFormGame:
    """Exact potential game ``u_i(a) = phi(a) + h_i(a_{-i})`` with random ``phi, h_i``.

    Exact potential games are weakly acyclic; with continuous random draws
    every pure NE is strict with probability one.
    """
    counts = tuple(action_counts)
    n = len(counts)
    phi = rng.standard_normal(counts)
    layers = []
    for i in range(n):
        shape = list(counts)
        shape[i] = 1
        layers.append(phi + rng.standard_normal(shape))
    return NormalFormGame(np.stack(layers))
