"""Operating states of the per-CAV platoon state machine."""

from enum import Enum


class FsmState(Enum):
    CAR_FOLLOWING = "CarFollowing"
    LANE_CHANGE = "LaneChange"
    BACK_TO_INITIAL_LANE = "BackToInitialLane"
    SPLIT = "Split"
    JOIN = "Join"

    def __str__(self) -> str:  # compact value for logs
        return self.value
