"""Financial value projections: cost savings, time savings, revenue growth.

Pure decimal arithmetic, no floats, so projections are exact and the
acceptance checks can assert equality. First-year values scale steady-state
values by the ratio of the adoption fractions for the linear formula shapes;
flat savings hold at both stages.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

CATEGORIES = ("cost_savings", "time_savings", "revenue_growth")
STAGES = ("intake", "implementation", "monitoring")

SOFT_SAVINGS_NOTE = (
    "Time savings are soft: saved minutes are repurposed rather than "
    "eliminated, and are not discounted numerically."
)


class NegativeInput(ValueError):
    """Calculator inputs must be non-negative."""


class InvalidCounts(ValueError):
    """Chart counts after screening cannot exceed the counts before."""


class UnknownFormula(ValueError):
    """Scenario names a formula shape that is not registered."""


def _dec(value) -> Decimal:
    return value if isinstance(value, Decimal) else Decimal(str(value))


def round_cents(value: Decimal) -> Decimal:
    return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def time_savings(
    users,
    queries_per_day,
    minutes_per_query,
    hourly_rate,
    days_per_year,
) -> Decimal:
    """Annual dollar value of time saved: users x queries/day x minutes/query
    converted to hours, priced at the hourly rate, over the working days."""
    args = [_dec(v) for v in (users, queries_per_day, minutes_per_query, hourly_rate, days_per_year)]
    if any(a < 0 for a in args):
        raise NegativeInput("time_savings inputs must be >= 0")
    users, qpd, mpq, rate, days = args
    return users * qpd * mpq / 60 * rate * days


def chart_review_savings(charts_before, charts_after, minutes_per_chart) -> Decimal:
    """Hours of review avoided per day when screening narrows the chart list."""
    before, after, minutes = _dec(charts_before), _dec(charts_after), _dec(minutes_per_chart)
    if before < 0 or after < 0 or minutes < 0:
        raise InvalidCounts("counts and minutes must be >= 0")
    if after > before:
        raise InvalidCounts(f"charts_after ({after}) exceeds charts_before ({before})")
    return (before - after) * minutes / 60


def bed_day_revenue(beds_per_day, revenue_per_bed_day, days_per_year) -> Decimal:
    beds, rate, days = _dec(beds_per_day), _dec(revenue_per_bed_day), _dec(days_per_year)
    if beds < 0 or rate < 0 or days < 0:
        raise NegativeInput("bed_day_revenue inputs must be >= 0")
    return beds * rate * days


@dataclass(frozen=True)
class ValueScenario:
    name: str
    category: str  # cost_savings | time_savings | revenue_growth
    stage: str  # intake | implementation | monitoring
    formula: str
    inputs: dict[str, Decimal]
    first_year_adoption: Decimal = Decimal("0.5")
    steady_state_adoption: Decimal = Decimal("1.0")

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        for label, fraction in (
            ("first_year_adoption", self.first_year_adoption),
            ("steady_state_adoption", self.steady_state_adoption),
        ):
            if not (0 < fraction <= 1):
                raise ValueError(f"{label} must be in (0, 1], got {fraction}")
        if self.first_year_adoption > self.steady_state_adoption:
            raise ValueError("first_year_adoption must be <= steady_state_adoption")


@dataclass
class Projection:
    annual_value: Decimal
    stage_values: dict[str, Decimal]
    assumptions: list[str] = field(default_factory=list)


def _formula_time_savings(inputs: dict[str, Decimal]) -> Decimal:
    return time_savings(
        inputs["users"],
        inputs["queries_per_day"],
        inputs["minutes_per_query"],
        inputs["hourly_rate"],
        inputs["days_per_year"],
    )


def _formula_chart_review(inputs: dict[str, Decimal]) -> Decimal:
    hours_per_day = chart_review_savings(
        inputs["charts_before"], inputs["charts_after"], inputs["minutes_per_chart"]
    )
    return hours_per_day * _dec(inputs["hourly_rate"]) * _dec(inputs["days_per_year"])


def _formula_bed_day_revenue(inputs: dict[str, Decimal]) -> Decimal:
    return bed_day_revenue(
        inputs["beds_per_day"], inputs["revenue_per_bed_day"], inputs["days_per_year"]
    )


def _formula_flat_saving(inputs: dict[str, Decimal]) -> Decimal:
    amount = _dec(inputs["amount"])
    if amount < 0:
        raise NegativeInput("flat saving must be >= 0")
    return amount


# Flat savings do not scale with adoption; everything else is linear in it.
FORMULAS = {
    "time_savings": (_formula_time_savings, True),
    "chart_review": (_formula_chart_review, True),
    "bed_day_revenue": (_formula_bed_day_revenue, True),
    "flat_saving": (_formula_flat_saving, False),
}


def project(scenario: ValueScenario) -> Projection:
    """Evaluate the scenario's formula at both adoption stages.

    Steady state is the formula value as given; the first year scales it by
    first_year_adoption / steady_state_adoption for the linear shapes. The
    assumptions list reproduces every input so a projection is auditable
    standalone.
    """
    try:
        formula, scales_with_adoption = FORMULAS[scenario.formula]
    except KeyError:
        raise UnknownFormula(
            f"formula {scenario.formula!r} is not one of {sorted(FORMULAS)}"
        ) from None
    steady = formula(scenario.inputs)
    if scales_with_adoption:
        first = steady * scenario.first_year_adoption / scenario.steady_state_adoption
    else:
        first = steady
    assumptions = [f"formula: {scenario.formula}", f"category: {scenario.category}"]
    assumptions += [f"{key} = {value}" for key, value in sorted(scenario.inputs.items())]
    assumptions.append(
        f"adoption: first year {scenario.first_year_adoption}, "
        f"steady state {scenario.steady_state_adoption}"
        + ("" if scales_with_adoption else " (flat saving, not scaled)")
    )
    if scenario.category == "time_savings":
        assumptions.append(SOFT_SAVINGS_NOTE)
    return Projection(
        annual_value=steady,
        stage_values={"first_year": first, "steady_state": steady},
        assumptions=assumptions,
    )


def load_scenario(path: str | Path) -> ValueScenario:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ValueScenario(
        name=doc["name"],
        category=doc["category"],
        stage=doc["stage"],
        formula=doc["formula"],
        inputs={key: _dec(value) for key, value in doc["inputs"].items()},
        first_year_adoption=_dec(doc.get("first_year_adoption", "0.5")),
        steady_state_adoption=_dec(doc.get("steady_state_adoption", "1.0")),
    )


def format_currency(value: Decimal) -> str:
    return f"${round_cents(value):,}"


def format_compact_currency(value: Decimal) -> str:
    """Two-significant-figure rendering for headlines: 2190000 -> $2.2M."""
    value = _dec(value)
    for threshold, suffix in ((Decimal("1e9"), "B"), (Decimal("1e6"), "M"), (Decimal("1e3"), "K")):
        if abs(value) >= threshold:
            scaled = value / threshold
            quantum = Decimal(1).scaleb(scaled.adjusted() - 1)  # two significant figures
            rounded = scaled.quantize(quantum, rounding=ROUND_HALF_UP)
            return f"${rounded.normalize():f}{suffix}"
    return f"${round_cents(value):,}"
