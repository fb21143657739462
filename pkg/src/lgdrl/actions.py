"""The five discrete driving decisions and their wire tokens."""

from __future__ import annotations

from enum import IntEnum


class ActionId(IntEnum):
    LEFT_LANE_CHANGE = 0
    IDLE = 1
    RIGHT_LANE_CHANGE = 2
    ACCELERATE = 3
    DECELERATE = 4

    @property
    def token(self) -> str:
        return self.name

    @classmethod
    def from_token(cls, token: str) -> "ActionId":
        return cls[token.strip().upper()]


N_ACTIONS = len(ActionId)
LANE_CHANGES = (ActionId.LEFT_LANE_CHANGE, ActionId.RIGHT_LANE_CHANGE)
