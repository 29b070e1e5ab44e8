"""Panel data model for bilateral trade.

Ingests reporter/partner CSV files, canonicalizes country pairs, and builds
the derived columns every estimator consumes: the log real trade outcome,
the both-in-union treatment indicator, effect modifiers, and controls.

A :class:`PanelDataset` is immutable after construction; filtering and
treatment overrides always return new instances.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicatePairYear,
    EmptyPretreatmentWindow,
    EmptyResult,
    InvalidSpec,
    MalformedRow,
    MirrorFlowWarning,
    MissingDeflator,
    NonPositiveGdp,
)

MODIFIER_GDP_PRODUCT = "log_gdp_product"
MODIFIER_GDP_PER_CAPITA = "log_gdp_per_capita"
MODIFIER_PRE_TRADE = "pre_trade_intensity"
CONTROL_YEAR = "year"

BASE_MODIFIERS = (MODIFIER_GDP_PRODUCT, MODIFIER_GDP_PER_CAPITA, MODIFIER_PRE_TRADE)
CONTROL_NAMES = (MODIFIER_GDP_PRODUCT, MODIFIER_GDP_PER_CAPITA, CONTROL_YEAR)

CSV_COLUMNS = [
    "reporter", "partner", "year", "exports", "imports",
    "gdp_reporter", "gdp_partner", "pop_reporter", "pop_partner",
    "euro_reporter", "euro_partner",
]


@dataclass(frozen=True, order=True)
class CountryCode:
    """Two-letter uppercase country identifier with a total order."""

    code: str

    def __post_init__(self):
        c = self.code
        if len(c) != 2 or not c.isascii() or not c.isalpha() or c != c.upper():
            raise InvalidSpec(f"country code must be 2 ASCII uppercase letters, got {c!r}")

    def __str__(self) -> str:
        return self.code


@dataclass(frozen=True, order=True)
class PairKey:
    """Unordered country pair, canonicalized so that ``a < b``."""

    a: CountryCode
    b: CountryCode

    def __post_init__(self):
        if not self.a < self.b:
            raise InvalidSpec(f"pair key not canonical: {self.a} / {self.b}")

    @classmethod
    def of(cls, x: CountryCode | str, y: CountryCode | str) -> "PairKey":
        if isinstance(x, str):
            x = CountryCode(x)
        if isinstance(y, str):
            y = CountryCode(y)
        if x == y:
            raise InvalidSpec(f"pair must join two distinct countries, got {x} twice")
        return cls(x, y) if x < y else cls(y, x)

    def involves(self, country: CountryCode) -> bool:
        return self.a == country or self.b == country

    def __str__(self) -> str:
        return f"{self.a}-{self.b}"


@dataclass(frozen=True)
class Observation:
    """One pair-year record, oriented so the reporter is ``pair.a``.

    ``exports`` is the flow a -> b and ``imports`` the flow b -> a, both in
    nominal currency units. ``mirrored`` marks rows reconstructed from a
    partner-reported record because the canonical direction was absent.
    """

    pair: PairKey
    year: int
    exports: float
    imports: float
    ppi: float
    gdp_a: float
    gdp_b: float
    pop_a: float
    pop_b: float
    euro_a: bool
    euro_b: bool
    extra: Mapping[str, float] = field(default_factory=dict)
    mirrored: bool = False

    def __post_init__(self):
        if self.exports < 0 or self.imports < 0:
            raise InvalidSpec(f"negative trade flow for {self.pair} {self.year}")
        if self.ppi <= 0:
            raise InvalidSpec(f"non-positive deflator for {self.pair} {self.year}")
        if self.gdp_a <= 0 or self.gdp_b <= 0:
            raise NonPositiveGdp(f"non-positive GDP for {self.pair} {self.year}")
        if self.pop_a <= 0 or self.pop_b <= 0:
            raise InvalidSpec(f"non-positive population for {self.pair} {self.year}")

    @property
    def trade_nominal(self) -> float:
        return self.exports + self.imports


@dataclass(frozen=True)
class SampleFilter:
    """Row/pair selection used by robustness sweeps.

    ``pair_predicate`` receives a :class:`PairKey` and the dataset and must
    return True to keep the pair. ``years`` is inclusive on both ends.
    """

    countries: Optional[frozenset] = None
    years: Optional[tuple] = None
    drop_country: Optional[CountryCode] = None
    pair_predicate: Optional[Callable] = None

    def __post_init__(self):
        if self.years is not None and self.years[0] > self.years[1]:
            raise InvalidSpec(f"year filter lo > hi: {self.years}")
        if (
            self.countries is not None
            and self.drop_country is not None
            and self.drop_country not in self.countries
        ):
            raise InvalidSpec("drop_country is not in the include set; filter is contradictory")


class PanelDataset:
    """Immutable rectangular panel with derived estimation columns.

    Attributes
    ----------
    observations : tuple of Observation
    y : ndarray
        Log real bilateral trade, NaN where nominal trade is zero.
    t : ndarray of 0/1
        Treatment: both countries in the currency union that year.
    x : ndarray (n, p)
        Effect modifiers; columns named in ``modifier_names``.
    w : ndarray (n, q)
        Controls; columns named in ``control_names``.
    pair_codes : ndarray of int
        Cluster key per row (index into ``pairs``).
    """

    def __init__(
        self,
        observations: Sequence[Observation],
        pretreatment_window: tuple,
        intensity: Optional[Mapping[PairKey, float]] = None,
    ):
        obs = sorted(observations, key=lambda o: (o.pair, o.year))
        if not obs:
            raise EmptyResult("panel has no observations")
        seen = set()
        for o in obs:
            key = (o.pair, o.year)
            if key in seen:
                raise DuplicatePairYear(f"duplicate observation for {o.pair} in {o.year}")
            seen.add(key)
        self.observations = tuple(obs)
        self.pretreatment_window = (int(pretreatment_window[0]), int(pretreatment_window[1]))

        self.pairs = sorted({o.pair for o in obs})
        pair_index = {p: i for i, p in enumerate(self.pairs)}
        self.countries = sorted({c for p in self.pairs for c in (p.a, p.b)})

        n = len(obs)
        self.years = np.array([o.year for o in obs], dtype=np.int64)
        self.pair_codes = np.array([pair_index[o.pair] for o in obs], dtype=np.int64)
        self.trade_real = np.array([o.trade_nominal / o.ppi for o in obs], dtype=np.float64)
        self.y = np.where(self.trade_real > 0, np.log(np.where(self.trade_real > 0, self.trade_real, 1.0)), np.nan)
        self.t = np.array([1 if (o.euro_a and o.euro_b) else 0 for o in obs], dtype=np.int64)

        lgp = np.array([math.log(o.gdp_a * o.gdp_b) for o in obs])
        lgpc = np.array([math.log((o.gdp_a + o.gdp_b) / (o.pop_a + o.pop_b)) for o in obs])

        if intensity is None:
            intensity = _window_intensity(self.observations, self.pretreatment_window)
        self._intensity = dict(intensity)
        missing = [p for p in self.pairs if p not in self._intensity]
        if missing:
            raise EmptyPretreatmentWindow(missing[0])
        pre = np.array([self._intensity[o.pair] for o in obs])

        self.extra_names = sorted({k for o in obs for k in o.extra})
        extras = [np.array([float(o.extra.get(k, np.nan)) for o in obs]) for k in self.extra_names]

        self.modifier_names = list(BASE_MODIFIERS) + self.extra_names
        self.x = np.column_stack([lgp, lgpc, pre] + extras) if n else np.empty((0, 3))
        self.control_names = list(CONTROL_NAMES)
        self.w = np.column_stack([lgp, lgpc, self.years.astype(np.float64)])

    # -- basic accessors ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def pair_intensity(self, pair: PairKey) -> float:
        return self._intensity[pair]

    def has_outcome(self) -> np.ndarray:
        """Mask of rows usable by log-outcome estimators."""
        return np.isfinite(self.y)

    def adoption_years(self) -> dict:
        """First treated year per pair; pairs never treated are absent."""
        out: dict = {}
        for o in self.observations:
            if o.euro_a and o.euro_b:
                cur = out.get(o.pair)
                if cur is None or o.year < cur:
                    out[o.pair] = o.year
        return out

    def adopter_countries(self) -> set:
        """Countries observed inside the union at least once."""
        adopters = set()
        for o in self.observations:
            if o.euro_a:
                adopters.add(o.pair.a)
            if o.euro_b:
                adopters.add(o.pair.b)
        return adopters

    def column(self, name: str) -> np.ndarray:
        """Fetch a derived column by name (modifier, control, y, or t)."""
        if name == "y":
            return self.y
        if name == "t":
            return self.t.astype(np.float64)
        if name in self.modifier_names:
            return self.x[:, self.modifier_names.index(name)]
        if name in self.control_names:
            return self.w[:, self.control_names.index(name)]
        raise KeyError(name)

    # -- derived datasets ---------------------------------------------------

    def subset(self, mask: np.ndarray) -> "PanelDataset":
        """New dataset keeping rows where ``mask`` is True; intensity is kept."""
        kept = [o for o, m in zip(self.observations, mask) if m]
        if not kept:
            raise EmptyResult("filter removes all rows")
        keep_pairs = {o.pair for o in kept}
        intensity = {p: v for p, v in self._intensity.items() if p in keep_pairs}
        return PanelDataset(kept, self.pretreatment_window, intensity)

    def replace_treatment(self, new_t: np.ndarray) -> "PanelDataset":
        """New dataset with the treatment column overridden (placebo runs)."""
        new_t = np.asarray(new_t)
        if new_t.shape != self.t.shape:
            raise InvalidSpec("treatment override has wrong length")
        obs = [
            replace(o, euro_a=bool(v), euro_b=bool(v))
            for o, v in zip(self.observations, new_t)
        ]
        return PanelDataset(obs, self.pretreatment_window, self._intensity)

    def row_table(self) -> list:
        """Per-row mapping view used by injected nuisance callables."""
        rows = []
        for i, o in enumerate(self.observations):
            rec = {
                "pair": o.pair,
                "year": o.year,
                MODIFIER_GDP_PRODUCT: self.x[i, 0],
                MODIFIER_GDP_PER_CAPITA: self.x[i, 1],
                MODIFIER_PRE_TRADE: self.x[i, 2],
            }
            for j, name in enumerate(self.extra_names):
                rec[name] = self.x[i, 3 + j]
            rows.append(rec)
        return rows


def _window_intensity(observations, window) -> dict:
    lo, hi = window
    sums: dict = {}
    counts: dict = {}
    pairs = set()
    for o in observations:
        pairs.add(o.pair)
        if lo <= o.year <= hi and o.trade_nominal > 0:
            yv = math.log(o.trade_nominal / o.ppi)
            sums[o.pair] = sums.get(o.pair, 0.0) + yv
            counts[o.pair] = counts.get(o.pair, 0) + 1
    out = {}
    for p in pairs:
        if counts.get(p, 0) == 0:
            raise EmptyPretreatmentWindow(p)
        out[p] = sums[p] / counts[p]
    return out


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class IngestConfig:
    """Options for :func:`ingest_csv`.

    ``deflator_path`` points at a ``year,ppi`` side file; alternatively the
    main file may carry a ``ppi`` column. ``pretreatment_window`` sets the
    window for the pre-union trade intensity modifier.
    """

    deflator_path: Optional[str] = None
    pretreatment_window: tuple = (1995, 1998)
    year_range: Optional[tuple] = None


def _parse_float(raw: str, line: int, column: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise MalformedRow(line, column, f"not a number: {raw!r}") from None


def _parse_bool(raw: str, line: int, column: str) -> bool:
    if raw in ("0", "1"):
        return raw == "1"
    raise MalformedRow(line, column, f"expected 0/1, got {raw!r}")


def read_deflator(path: str) -> dict:
    """Load the ``year,ppi`` side file."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"year", "ppi"} - set(reader.fieldnames):
            raise MissingDeflator(f"deflator file {path} must have columns year,ppi")
        for lineno, row in enumerate(reader, start=2):
            year = int(_parse_float(row["year"], lineno, "year"))
            ppi = _parse_float(row["ppi"], lineno, "ppi")
            if ppi <= 0:
                raise MalformedRow(lineno, "ppi", "deflator must be positive")
            table[year] = ppi
    return table


def ingest_csv(path: str, config: IngestConfig = IngestConfig()) -> PanelDataset:
    """Read a reporter/partner trade CSV into a :class:`PanelDataset`.

    Directional raw rows are canonicalized: for each pair-year the record
    reported by the alphabetically-first country wins; when only the reverse
    direction exists it is flipped into the canonical orientation and the
    observation flagged as mirrored.
    """
    deflator = read_deflator(config.deflator_path) if config.deflator_path else None

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise MalformedRow(1, missing[0], "column missing from header")
        has_ppi_col = "ppi" in header
        if deflator is None and not has_ppi_col:
            raise MissingDeflator(
                "no deflator: supply a ppi column or a year,ppi side file"
            )
        extra_cols = [c for c in header if c.startswith("extra_")]

        canonical: dict = {}
        reverse: dict = {}
        for lineno, row in enumerate(reader, start=2):
            rep = (row.get("reporter") or "").strip()
            par = (row.get("partner") or "").strip()
            try:
                reporter = CountryCode(rep)
                partner = CountryCode(par)
            except InvalidSpec as exc:
                raise MalformedRow(lineno, "reporter", str(exc)) from None
            if reporter == partner:
                raise MalformedRow(lineno, "partner", "reporter equals partner")
            year = int(_parse_float(row["year"], lineno, "year"))
            if config.year_range is not None and not (
                config.year_range[0] <= year <= config.year_range[1]
            ):
                continue
            exports = _parse_float(row["exports"], lineno, "exports")
            imports = _parse_float(row["imports"], lineno, "imports")
            if exports < 0 or imports < 0:
                raise MalformedRow(lineno, "exports", "trade flows must be >= 0")
            gdp_r = _parse_float(row["gdp_reporter"], lineno, "gdp_reporter")
            gdp_p = _parse_float(row["gdp_partner"], lineno, "gdp_partner")
            if gdp_r <= 0 or gdp_p <= 0:
                raise NonPositiveGdp(f"non-positive GDP at line {lineno}")
            pop_r = _parse_float(row["pop_reporter"], lineno, "pop_reporter")
            pop_p = _parse_float(row["pop_partner"], lineno, "pop_partner")
            euro_r = _parse_bool(row["euro_reporter"].strip(), lineno, "euro_reporter")
            euro_p = _parse_bool(row["euro_partner"].strip(), lineno, "euro_partner")
            if has_ppi_col:
                ppi = _parse_float(row["ppi"], lineno, "ppi")
            else:
                if year not in deflator:
                    raise MissingDeflator(f"no deflator value for year {year}")
                ppi = deflator[year]
            extra = {c[len("extra_"):]: _parse_float(row[c], lineno, c) for c in extra_cols}

            pair = PairKey.of(reporter, partner)
            key = (pair, year)
            is_canonical = reporter == pair.a
            record = dict(
                exports=exports, imports=imports, ppi=ppi,
                gdp_r=gdp_r, gdp_p=gdp_p, pop_r=pop_r, pop_p=pop_p,
                euro_r=euro_r, euro_p=euro_p, extra=extra, line=lineno,
            )
            bucket = canonical if is_canonical else reverse
            if key in bucket:
                raise DuplicatePairYear(
                    f"{pair} {year} reported twice by the same reporter "
                    f"(lines {bucket[key]['line']} and {lineno})"
                )
            bucket[key] = record

    observations = []
    mirrored_pairs = set()
    for key in sorted(set(canonical) | set(reverse)):
        pair, year = key
        if key in canonical:
            r = canonical[key]
            obs = Observation(
                pair=pair, year=year,
                exports=r["exports"], imports=r["imports"], ppi=r["ppi"],
                gdp_a=r["gdp_r"], gdp_b=r["gdp_p"],
                pop_a=r["pop_r"], pop_b=r["pop_p"],
                euro_a=r["euro_r"], euro_b=r["euro_p"],
                extra=r["extra"],
            )
        else:
            # only the reverse direction exists: partner-reported exports are
            # the canonical imports and vice versa
            r = reverse[key]
            mirrored_pairs.add(pair)
            obs = Observation(
                pair=pair, year=year,
                exports=r["imports"], imports=r["exports"], ppi=r["ppi"],
                gdp_a=r["gdp_p"], gdp_b=r["gdp_r"],
                pop_a=r["pop_p"], pop_b=r["pop_r"],
                euro_a=r["euro_p"], euro_b=r["euro_r"],
                extra=r["extra"],
                mirrored=True,
            )
        observations.append(obs)
    if mirrored_pairs:
        warnings.warn(
            f"{len(mirrored_pairs)} pair(s) filled from partner-reported flows",
            MirrorFlowWarning,
            stacklevel=2,
        )
    return PanelDataset(observations, config.pretreatment_window)


# ---------------------------------------------------------------------------
# derived-column operations


def compute_pre_trade_intensity(ds: PanelDataset, window: tuple) -> PanelDataset:
    """Recompute the pre-union trade intensity over a new window."""
    intensity = _window_intensity(ds.observations, window)
    return PanelDataset(ds.observations, (int(window[0]), int(window[1])), intensity)


def apply_filter(ds: PanelDataset, f: SampleFilter) -> PanelDataset:
    """Row selection; derived columns preserved, intensity not recomputed."""
    mask = np.ones(len(ds), dtype=bool)
    for i, o in enumerate(ds.observations):
        if f.years is not None and not (f.years[0] <= o.year <= f.years[1]):
            mask[i] = False
            continue
        if f.countries is not None and not (
            o.pair.a in f.countries and o.pair.b in f.countries
        ):
            mask[i] = False
            continue
        if f.drop_country is not None and o.pair.involves(f.drop_country):
            mask[i] = False
            continue
        if f.pair_predicate is not None and not f.pair_predicate(o.pair, ds):
            mask[i] = False
    if not mask.any():
        raise EmptyResult("filter removes all rows")
    return ds.subset(mask)


# pair-class predicates for the trade-diversion subsets

def intra_union_predicate(pair: PairKey, ds: PanelDataset) -> bool:
    adopters = ds.adopter_countries()
    return pair.a in adopters and pair.b in adopters


def mixed_union_predicate(pair: PairKey, ds: PanelDataset) -> bool:
    adopters = ds.adopter_countries()
    return (pair.a in adopters) != (pair.b in adopters)


def outside_union_predicate(pair: PairKey, ds: PanelDataset) -> bool:
    adopters = ds.adopter_countries()
    return pair.a not in adopters and pair.b not in adopters
