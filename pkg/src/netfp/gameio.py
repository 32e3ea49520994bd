"""JSON serialization of games.

Normal form::

    {"type": "normal_form", "n": 2, "action_counts": [2, 2],
     "utilities": [...]}          # flat, player-major then row-major joint action

Congestion form::

    {"type": "congestion", "m": 3,
     "actions": [[[0], [1, 2]], ...],   # per player, per action: resource ids
     "values": [[...], ...],            # n x m player-specific resource values
     "rule": [[...], ...],              # m x (>= n+1) congestion factor by total count
     "allow_empty": false}

Numbers are written with ``repr`` precision so floats round-trip exactly.
On load, a number may also be given as a ``"p/q"`` string.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from netfp.errors import InvalidArgumentError
from netfp.games import CongestionFormGame, NormalFormGame


def _num(x):
    if isinstance(x, str):
        return float(Fraction(x))
    return float(x)


def _nums(seq):
    return [_num(x) for x in seq]


def game_to_dict(game) -> dict:
    if isinstance(game, NormalFormGame):
        return {
            "type": "normal_form",
            "n": game.n,
            "action_counts": list(game.action_counts),
            "utilities": [float(x) for x in game.utilities.ravel()],
        }
    if isinstance(game, CongestionFormGame):
        return {
            "type": "congestion",
            "m": game.m,
            "actions": [[list(a) for a in acts] for acts in game.action_sets],
            "values": [[float(x) for x in row] for row in game.values],
            "rule": [[float(x) for x in row] for row in game.rule],
            "allow_empty": game.allow_empty,
        }
    raise InvalidArgumentError(f"cannot serialize {type(game).__name__}")


def game_from_dict(data: dict):
    kind = data.get("type")
    try:
        if kind == "normal_form":
            return NormalFormGame.from_flat(
                int(data["n"]), data["action_counts"], _nums(data["utilities"])
            )
        if kind == "congestion":
            return CongestionFormGame(
                m=int(data["m"]),
                action_sets=data["actions"],
                values=np.array([_nums(row) for row in data["values"]]),
                rule=np.array([_nums(row) for row in data["rule"]]),
                allow_empty=bool(data.get("allow_empty", False)),
            )
    except KeyError as exc:
        raise InvalidArgumentError(f"game document is missing field {exc}") from None
    raise InvalidArgumentError(f"unknown game type {kind!r}")


def dumps(game) -> str:
    return json.dumps(game_to_dict(game))


def loads(text: str):
    return game_from_dict(json.loads(text))


def save_game(game, path) -> None:
    Path(path).write_text(dumps(game) + "\n")


def load_game(path):
    return loads(Path(path).read_text())
