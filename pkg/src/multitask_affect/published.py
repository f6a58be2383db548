"""Published challenge results used as a check on the P-score arithmetic.

Each row holds (setting, label, ccc_v, ccc_a, f1_expr, f1_au, printed P).
The F1 columns are already macro averages.
"""

from __future__ import annotations

from typing import NamedTuple

P_TOLERANCE = 0.006


class PublishedRow(NamedTuple):
    setting: str
    label: str
    ccc_v: float
    ccc_a: float
    f1_expr: float
    f1_au: float
    printed_p: float

    @property
    def inputs(self) -> tuple[float, float, float, float]:
        return self.ccc_v, self.ccc_a, self.f1_expr, self.f1_au


PUBLISHED_ROWS = (
    PublishedRow("multitask", "DDAMFN", 0.549, 0.524, 0.277, 0.470, 1.287),
    PublishedRow("multitask", "DDAMFN+thresholds", 0.549, 0.524, 0.277, 0.510, 1.327),
    PublishedRow("multitask", "Custom classifier", 0.548, 0.518, 0.262, 0.473, 1.283),
    PublishedRow("multitask", "Custom classifier+thresholds", 0.548, 0.518, 0.262, 0.500, 1.313),
    PublishedRow("single-task", "DDAMFN", 0.604, 0.550, 0.287, 0.490, 1.354),
    PublishedRow("single-task", "DDAMFN+thresholds", 0.604, 0.550, 0.287, 0.529, 1.393),
    PublishedRow("single-task", "Custom classifier", 0.530, 0.537, 0.243, 0.487, 1.263),
    PublishedRow("single-task", "Custom classifier+thresholds", 0.530, 0.537, 0.243, 0.524, 1.300),
)
