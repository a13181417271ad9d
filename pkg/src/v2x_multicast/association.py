"""Vehicle to BS association: best-SINR start and worst-vehicle refinement."""

from __future__ import annotations

import numpy as np

from .model import association_matrix

SINR_TOL_DB = 1e-9


def _sinr(channel_or_sinr):
    return np.asarray(getattr(channel_or_sinr, "sinr_db", channel_or_sinr), dtype=float)


def initial_association(channel) -> np.ndarray:
    """Attach every vehicle to its highest-SINR BS (ties -> lowest index)."""
    sinr = _sinr(channel)
    if not np.all(np.isfinite(sinr)):
        raise ValueError("SINR matrix must be finite")
    return association_matrix(np.argmax(sinr, axis=0), sinr.shape[0])


def worst_sinrs(serving, sinr) -> np.ndarray:
    """Per-BS minimum SINR over attached vehicles (+inf for an empty BS)."""
    out = np.full(sinr.shape[0], np.inf)
    for v, n in enumerate(serving):
        out[n] = min(out[n], sinr[n, v])
    return out


def refine_association_moves(y, channel, tol: float = SINR_TOL_DB):
    """Refinement that also reports each move as ``(vehicle, from_bs, to_bs)``.

    For each BS in ascending order, its worst vehicle is moved when taking it
    away strictly raises the BS's worst SINR and the vehicle's SINR at the
    target beats the target's current worst (so the target's worst is
    unchanged). Among several eligible targets the one where the vehicle has
    the highest SINR wins. Rounds repeat until a full pass moves nothing.
    """
    sinr = _sinr(channel)
    y = np.asarray(y, dtype=int)
    if not np.all(y.sum(axis=0) == 1):
        raise ValueError("every vehicle must be attached to exactly one BS")
    n_bs, n_veh = sinr.shape
    serving = np.argmax(y, axis=0)
    moves = []
    # a move strictly raises the source's worst SINR and never lowers any
    # other BS's, so each BS is a source at most n_veh times
    cap = n_bs * n_veh
    while True:
        moved = False
        for n in range(n_bs):
            members = np.flatnonzero(serving == n)
            if members.size == 0:
                continue
            v_star = members[np.argmin(sinr[n, members])]
            worst = sinr[n, v_star]
            rest = members[members != v_star]
            worst_after = sinr[n, rest].min() if rest.size else np.inf
            if not worst_after - worst > tol:
                continue
            best_target, best_sinr = None, -np.inf
            for m in range(n_bs):
                if m == n:
                    continue
                target_members = np.flatnonzero(serving == m)
                if target_members.size == 0:
                    continue
                if sinr[m, v_star] > sinr[m, target_members].min() + tol and sinr[m, v_star] > best_sinr:
                    best_target, best_sinr = m, sinr[m, v_star]
            if best_target is None:
                continue
            serving[v_star] = best_target
            moves.append((int(v_star), n, best_target))
            moved = True
            if len(moves) > cap:
                raise RuntimeError("association refinement failed to terminate")
        if not moved:
            break
    return association_matrix(serving, n_bs), moves


def refine_association(y, channel) -> np.ndarray:
    return refine_association_moves(y, channel)[0]
