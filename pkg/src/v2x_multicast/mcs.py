"""CQI/MCS feedback table and SINR to CQI mapping."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

MODULATION_ORDER = {"QPSK": 2, "16QAM": 4, "64QAM": 6}

# (cqi4g, cqi5g, modulation, code rate x1024, SINR threshold dB, efficiency)
REFERENCE_ROWS = (
    (0, None, None, None, None, None),
    (1, None, "QPSK", 78, -9.478, 0.1523),
    (2, 0, "QPSK", 120, -6.658, 0.2344),
    (3, 2, "QPSK", 193, -4.098, 0.3770),
    (4, 4, "QPSK", 308, -1.798, 0.6016),
    (5, 6, "QPSK", 449, 0.399, 0.8770),
    (6, 8, "QPSK", 602, 2.424, 1.1758),
    (7, 11, "16QAM", 378, 4.489, 1.4766),
    (8, 13, "16QAM", 490, 6.367, 1.9141),
    (9, 15, "16QAM", 616, 8.456, 2.4063),
    (10, 18, "64QAM", 466, 10.266, 2.7305),
    (11, 20, "64QAM", 567, 12.218, 3.3223),
    (12, 22, "64QAM", 666, 14.122, 3.9023),
    (13, 24, "64QAM", 772, 15.849, 4.5234),
    (14, 26, "64QAM", 873, 17.786, 5.1152),
    (15, 28, "64QAM", 948, 19.809, 5.5547),
)

CSV_COLUMNS = ("cqi4g", "cqi5g", "modulation", "code_rate_x1024",
               "sinr_threshold_db", "efficiency")

MIN_CQI = 1
MAX_CQI = 15


class McsTableError(ValueError):
    pass


@dataclass(frozen=True)
class McsEntry:
    cqi4g: int
    cqi5g: int | None
    modulation_order: int
    code_rate_x1024: int
    sinr_threshold_db: float
    efficiency: float

    @property
    def transmits(self) -> bool:
        return self.cqi4g > 0


def _entry_from_row(row) -> McsEntry:
    cqi4g, cqi5g, modulation, rate, threshold, efficiency = row
    if cqi4g == 0:
        return McsEntry(0, None, 0, 0, -math.inf, 0.0)
    return McsEntry(int(cqi4g), cqi5g, MODULATION_ORDER[modulation], int(rate),
                    float(threshold), float(efficiency))


class McsTable:
    """The 16-row CQI table.

    Entry 0 means "no transmission" (efficiency 0, threshold -inf). Fractional
    CQI values, used by the relaxed solver, are handled by piecewise-linear
    interpolation over entries 1..15.
    """

    def __init__(self, entries):
        entries = list(entries)
        if len(entries) != 16:
            raise McsTableError(f"expected 16 entries, got {len(entries)}")
        for i, e in enumerate(entries):
            if e.cqi4g != i:
                raise McsTableError(f"entry {i} has cqi4g={e.cqi4g}")
        if entries[0].efficiency != 0 or entries[0].sinr_threshold_db != -math.inf:
            raise McsTableError("entry 0 must encode 'no transmission'")
        thr = [e.sinr_threshold_db for e in entries[1:]]
        eff = [e.efficiency for e in entries[1:]]
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise McsTableError("SINR thresholds must be strictly increasing")
        if any(b <= a for a, b in zip(eff, eff[1:])):
            raise McsTableError("efficiency must be strictly increasing")
        self.entries = tuple(entries)
        self._thresholds = thr
        # index 0 padded so arrays can be indexed directly by CQI
        self.thresholds_db = np.array([-np.inf] + thr)
        self.efficiencies = np.array([0.0] + eff)
        self._grid = np.arange(MIN_CQI, MAX_CQI + 1, dtype=float)

    def __getitem__(self, cqi: int) -> McsEntry:
        return self.entries[cqi]

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, McsTable) and self.entries == other.entries

    def efficiency(self, cqi):
        """Bits per symbol at a CQI; fractional CQI in [1, 15] interpolates."""
        return self._interp(cqi, self.efficiencies)

    def threshold_db(self, cqi):
        return self._interp(cqi, self.thresholds_db)

    def _interp(self, cqi, column):
        c = np.asarray(cqi, dtype=float)
        if np.all(c == np.round(c)):
            idx = c.astype(int)
            if np.any((idx < 0) | (idx > MAX_CQI)):
                raise McsTableError(f"CQI out of range: {cqi}")
            out = column[idx]
        else:
            if np.any((c < MIN_CQI) | (c > MAX_CQI)):
                raise McsTableError(f"fractional CQI outside [1, 15]: {cqi}")
            out = np.interp(c, self._grid, column[1:])
        return out.item() if np.ndim(out) == 0 else out

    def sinr_to_cqi(self, sinr_db: float) -> int:
        """Largest CQI whose threshold does not exceed ``sinr_db`` (0 if none)."""
        return bisect.bisect_right(self._thresholds, sinr_db)

    def sinr_to_cqi_array(self, sinr_db):
        return np.searchsorted(np.asarray(self._thresholds), sinr_db, side="right")


def sinr_to_cqi(sinr_db: float, table: McsTable) -> int:
    return table.sinr_to_cqi(sinr_db)


def default_table_path() -> Path:
    return Path(str(resources.files("v2x_multicast") / "data" / "mcs_table.csv"))


def _parse_optional_int(text: str):
    text = text.strip()
    return int(text) if text else None


def load_mcs_table(path: str | Path | None = None) -> McsTable:
    """Read a table CSV (column order as in ``CSV_COLUMNS``)."""
    path = Path(path) if path is not None else default_table_path()
    if not path.is_file():
        raise FileNotFoundError(f"MCS table not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader))
        if header != CSV_COLUMNS:
            raise McsTableError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or not "".join(raw).strip():
                continue
            if len(raw) != len(CSV_COLUMNS):
                raise McsTableError(f"{path}:{lineno}: expected 6 fields")
            try:
                cqi4g = int(raw[0])
                if cqi4g == 0:
                    rows.append((0, None, None, None, None, None))
                    continue
                rows.append((cqi4g, _parse_optional_int(raw[1]), raw[2].strip(),
                             int(raw[3]), float(raw[4]), float(raw[5])))
            except (ValueError, KeyError) as exc:
                raise McsTableError(f"{path}:{lineno}: {exc}") from None
    try:
        return McsTable(_entry_from_row(r) for r in rows)
    except KeyError as exc:
        raise McsTableError(f"{path}: unknown modulation {exc}") from None


def reference_table() -> McsTable:
    return McsTable(_entry_from_row(r) for r in REFERENCE_ROWS)


def compare_to_reference(table: McsTable) -> list[str]:
    """Differences between ``table`` and the canonical rows, one message each."""
    problems = []
    ref = reference_table()
    for got, want in zip(table.entries, ref.entries):
        if got != want:
            problems.append(f"CQI {want.cqi4g}: expected {want}, got {got}")
    return problems


DEFAULT_TABLE = reference_table()
