from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, TypeVar

import numpy as np

from mobility.app.errors import InstanceTooLargeError, MechanismError
from mobility.app.services.market import (
    MONEY_TOLERANCE,
    MarketOutcome,
    PlannerConfig,
    evaluate_outcome,
    planner_objective,
)
from mobility.app.services.network import Preferences, Scenario, Subclass, partition_subclasses
from mobility.app.services.solver import (
    AssignmentEvaluation,
    SolveResult,
    SubclassProblem,
    build_subclass_problem,
    solve_problem,
)
from mobility.app.telemetry import TelemetryClient

LOGGER = logging.getLogger("mobility.mechanism")

PaymentMode = Literal["clarke", "clarke-floored", "externality"]
PropertyName = Literal["IC", "IR", "WBB"]
Verdict = Literal["holds-on-tested-grid", "violated"]


@dataclass(frozen=True)
class PaymentRule:
    """How a traveler's charge is derived from the marginal economy without them.

    `externality` is the pure Clarke pivot term. `clarke` adds the traveler's own
    weighted operating share, which keeps truthful reporting optimal. `clarke-floored`
    additionally never charges less than the assigned service's operating cost.
    """

    mode: PaymentMode = "clarke"

    @property
    def floor_active(self) -> bool:
        return self.mode == "clarke-floored"


@dataclass(frozen=True)
class TravelerPayment:
    traveler_id: int
    payment: float
    externality: float
    operating_share: float
    others_optimum: float


@dataclass(frozen=True)
class SubclassSettlement:
    solve: SolveResult
    payments: tuple[TravelerPayment, ...]
    outcome: MarketOutcome | None
    findings: tuple[str, ...] = ()

    def payment_map(self) -> dict[int, float]:
        return {payment.traveler_id: payment.payment for payment in self.payments}


@dataclass(frozen=True)
class Witness:
    traveler_id: int
    subclass_index: int
    utility_gain: float
    misreport: str = ""
    grid_index: int | None = None


@dataclass(frozen=True)
class PropertyReport:
    property: PropertyName
    verdict: Verdict
    witnesses: tuple[Witness, ...]
    instances_tested: int
    aggregate_surplus: float | None = None
    findings: tuple[str, ...] = field(default=())

    @classmethod
    def build(
        cls,
        property_name: PropertyName,
        witnesses: Sequence[Witness],
        instances_tested: int,
        *,
        aggregate_surplus: float | None = None,
        findings: Sequence[str] = (),
    ) -> PropertyReport:
        return cls(
            property=property_name,
            verdict="violated" if witnesses else "holds-on-tested-grid",
            witnesses=tuple(witnesses),
            instances_tested=instances_tested,
            aggregate_surplus=aggregate_surplus,
            findings=tuple(findings),
        )


@dataclass(frozen=True)
class Misreport:
    grid_index: int
    preferences: Preferences
    description: str


@dataclass(frozen=True)
class MisreportGrid:
    theta_factors: tuple[float, ...] = (0.5, 0.875, 1.25, 1.625, 2.0)
    eta_offsets: tuple[int, ...] = (-2, -1, 0, 1, 2)
    delta_levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    extra_samples: int = 25

    def misreports(
        self,
        truth: Preferences,
        service_ids: Sequence[int],
        *,
        seed: int,
        traveler_id: int,
    ) -> tuple[Misreport, ...]:
        points: list[Misreport] = []
        for factor, offset, level in itertools.product(
            self.theta_factors, self.eta_offsets, self.delta_levels
        ):
            points.append(
                Misreport(
                    grid_index=len(points),
                    preferences=_perturb(truth, service_ids, factor, offset, [level] * len(service_ids)),
                    description=f"theta*{factor} eta{offset:+d} delta={level}",
                )
            )
        rng = np.random.default_rng([seed, traveler_id])
        for sample in range(self.extra_samples):
            factor = float(rng.choice(self.theta_factors))
            offset = int(rng.choice(self.eta_offsets))
            levels = [float(level) for level in rng.choice(self.delta_levels, size=len(service_ids))]
            points.append(
                Misreport(
                    grid_index=len(points),
                    preferences=_perturb(truth, service_ids, factor, offset, levels),
                    description=f"sample {sample}: theta*{factor} eta{offset:+d} delta={levels}",
                )
            )
        return tuple(points)


def _perturb(
    truth: Preferences,
    service_ids: Sequence[int],
    factor: float,
    offset: int,
    levels: Sequence[float],
) -> Preferences:
    return Preferences.build(
        preferred_travel_time=truth.preferred_travel_time * factor,
        max_co_travelers={
            service_id: max(0, truth.co_traveler_limit(service_id) + offset)
            for service_id in service_ids
        },
        value_of_time=dict(zip(service_ids, levels, strict=True)),
    )


def _others_cost(problem: SubclassProblem, evaluation: AssignmentEvaluation, position: int) -> float:
    keep = [index for index in range(len(problem.travelers)) if index != position]
    return planner_objective(
        [evaluation.inconveniences[index] for index in keep],
        [evaluation.operating_costs[index] for index in keep],
        problem.config,
    )


def _marginal_optimum(problem: SubclassProblem, traveler_id: int) -> float:
    if len(problem.travelers) == 1:
        return 0.0
    result = solve_problem(problem.without(traveler_id))
    if result.status != "optimal" or result.objective is None:
        raise MechanismError(
            f"marginal economy without traveler {traveler_id} is infeasible",
            traveler_id=traveler_id,
        )
    return result.objective


def _charge(
    rule: PaymentRule,
    config: PlannerConfig,
    *,
    traveler_id: int,
    others_cost: float,
    others_optimum: float,
    operating_share: float,
) -> TravelerPayment:
    externality = (others_cost - others_optimum) / config.omega1
    if rule.mode == "externality":
        payment = externality
    else:
        payment = externality + config.omega2 / config.omega1 * operating_share
        if rule.floor_active:
            payment = max(payment, operating_share)
    return TravelerPayment(
        traveler_id=traveler_id,
        payment=payment,
        externality=externality,
        operating_share=operating_share,
        others_optimum=others_optimum,
    )


def _require_money_weight(config: PlannerConfig) -> None:
    if not config.omega1 > 0:
        raise MechanismError("payments need omega1 > 0 to convert objective units to money")


def _payments_for(
    problem: SubclassProblem,
    evaluation: AssignmentEvaluation,
    rule: PaymentRule,
    marginals: dict[int, float],
) -> tuple[TravelerPayment, ...]:
    return tuple(
        _charge(
            rule,
            problem.config,
            traveler_id=profile.traveler_id,
            others_cost=_others_cost(problem, evaluation, position),
            others_optimum=marginals[profile.traveler_id],
            operating_share=evaluation.operating_costs[position],
        )
        for position, profile in enumerate(problem.travelers)
    )


def _marginal_findings(payments: Sequence[TravelerPayment]) -> tuple[str, ...]:
    findings = tuple(
        f"traveler {payment.traveler_id}: others do worse without them "
        f"(externality {payment.externality:.6g})"
        for payment in payments
        if payment.externality < -MONEY_TOLERANCE
    )
    for finding in findings:
        LOGGER.info("marginal economy finding %s", finding)
    return findings


def clarke_payments(
    subclass: Sequence[int] | Subclass,
    scenario: Scenario,
    config: PlannerConfig | None = None,
    rule: PaymentRule | None = None,
) -> tuple[TravelerPayment, ...]:
    return settle_subclass(subclass, scenario, config, rule).payments


def settle_subclass(
    subclass: Sequence[int] | Subclass,
    scenario: Scenario,
    config: PlannerConfig | None = None,
    rule: PaymentRule | None = None,
    *,
    solution: SolveResult | None = None,
) -> SubclassSettlement:
    """Solve the subclass, charge every traveler and evaluate the resulting outcome."""
    resolved_rule = rule or PaymentRule()
    planned = scenario if config is None or config == scenario.planner else scenario.with_planner(config)
    problem = build_subclass_problem(subclass, planned)
    _require_money_weight(problem.config)
    result = solution if solution is not None else solve_problem(problem)
    if result.status != "optimal" or result.assignment is None:
        raise MechanismError(f"subclass {problem.subclass_index} has no feasible assignment")
    evaluation = problem.evaluate(result.assignment.choices)
    if evaluation is None:
        raise MechanismError(f"subclass {problem.subclass_index}: optimum violates capacity")
    marginals = {tid: _marginal_optimum(problem, tid) for tid in problem.traveler_ids}
    payments = _payments_for(problem, evaluation, resolved_rule, marginals)
    outcome = evaluate_outcome(
        result.assignment,
        {payment.traveler_id: payment.payment for payment in payments},
        planned,
    )
    return SubclassSettlement(
        solve=result,
        payments=payments,
        outcome=outcome,
        findings=_marginal_findings(payments),
    )


T = TypeVar("T")
R = TypeVar("R")


def _map_cells(function: Callable[[T], R], cells: Sequence[T], workers: int) -> list[R]:
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(function, cells))
    return [function(cell) for cell in cells]


def verify_incentive_compatibility(
    scenario: Scenario,
    config: PlannerConfig | None = None,
    grid: MisreportGrid | None = None,
    seed: int = 0,
    *,
    rule: PaymentRule | None = None,
    workers: int = 1,
    limit: int = 1_000_000,
    telemetry: TelemetryClient | None = None,
) -> PropertyReport:
    """Search each traveler's misreport grid for a report that beats truth-telling.

    Utility under a misreport is always measured with the traveler's true preferences.
    """
    resolved_grid = grid or MisreportGrid()
    resolved_rule = rule or PaymentRule()
    planned = scenario if config is None or config == scenario.planner else scenario.with_planner(config)
    _require_money_weight(planned.planner)
    witnesses: list[Witness] = []
    findings: list[str] = []
    tested = 0

    for subclass in partition_subclasses(planned.travelers).subclasses:
        problem = build_subclass_problem(subclass, planned)
        if problem.size > limit:
            raise InstanceTooLargeError(
                f"subclass {subclass.index} is beyond the verifier bound",
                size=problem.size,
                bound=limit,
            )
        truthful = solve_problem(problem)
        if truthful.evaluation is None:
            findings.append(f"subclass {subclass.index}: truthful instance infeasible, skipped")
            continue
        marginals = {tid: _marginal_optimum(problem, tid) for tid in problem.traveler_ids}
        truthful_payments = _payments_for(problem, truthful.evaluation, resolved_rule, marginals)
        findings.extend(_marginal_findings(truthful_payments))

        cells: list[tuple[int, Misreport]] = []
        for position, profile in enumerate(problem.travelers):
            service_ids = [option.service_id for option in profile.options]
            cells.extend(
                (position, misreport)
                for misreport in resolved_grid.misreports(
                    profile.preferences,
                    service_ids,
                    seed=seed,
                    traveler_id=profile.traveler_id,
                )
            )

        def _cell(
            cell: tuple[int, Misreport],
            problem: SubclassProblem = problem,
            truthful_evaluation: AssignmentEvaluation = truthful.evaluation,
            truthful_payments: tuple[TravelerPayment, ...] = truthful_payments,
            marginals: dict[int, float] = marginals,
        ) -> Witness | None:
            position, misreport = cell
            profile = problem.travelers[position]
            reported = problem.with_preferences(profile.traveler_id, misreport.preferences)
            outcome = solve_problem(reported)
            if outcome.evaluation is None:
                return None
            charge = _charge(
                resolved_rule,
                reported.config,
                traveler_id=profile.traveler_id,
                others_cost=_others_cost(reported, outcome.evaluation, position),
                others_optimum=marginals[profile.traveler_id],
                operating_share=outcome.evaluation.operating_costs[position],
            )
            actual = problem.evaluate(outcome.evaluation.choices)
            if actual is None:
                return None
            v_bar = profile.max_willingness_to_pay
            misreport_utility = v_bar - actual.inconveniences[position] - charge.payment
            truthful_utility = (
                v_bar
                - truthful_evaluation.inconveniences[position]
                - truthful_payments[position].payment
            )
            gain = misreport_utility - truthful_utility
            if gain > MONEY_TOLERANCE:
                return Witness(
                    traveler_id=profile.traveler_id,
                    subclass_index=problem.subclass_index,
                    utility_gain=gain,
                    misreport=misreport.description,
                    grid_index=misreport.grid_index,
                )
            return None

        results = _map_cells(_cell, cells, workers)
        tested += len(cells)
        witnesses.extend(witness for witness in results if witness is not None)

    report = PropertyReport.build("IC", witnesses, tested, findings=findings)
    _log_report(report, telemetry)
    return report


def _settlements(
    scenario: Scenario,
    rule: PaymentRule,
    findings: list[str],
) -> list[SubclassSettlement]:
    settlements: list[SubclassSettlement] = []
    for subclass in partition_subclasses(scenario.travelers).subclasses:
        problem = build_subclass_problem(subclass, scenario)
        result = solve_problem(problem)
        if result.status != "optimal":
            findings.append(f"subclass {subclass.index}: infeasible, skipped")
            continue
        settlement = settle_subclass(subclass, scenario, rule=rule, solution=result)
        findings.extend(settlement.findings)
        settlements.append(settlement)
    return settlements


def verify_individual_rationality(
    scenario: Scenario,
    config: PlannerConfig | None = None,
    *,
    rule: PaymentRule | None = None,
    telemetry: TelemetryClient | None = None,
) -> PropertyReport:
    """Compare each recommendation against riding alone on the fallback at its own cost."""
    planned = scenario if config is None or config == scenario.planner else scenario.with_planner(config)
    findings: list[str] = []
    witnesses: list[Witness] = []
    tested = 0
    for settlement in _settlements(planned, rule or PaymentRule(), findings):
        problem = build_subclass_problem(settlement.solve.traveler_ids, planned)
        outcome = settlement.outcome
        assert outcome is not None
        for position, profile in enumerate(problem.travelers):
            tested += 1
            fallback = problem.option(position, problem.fallback_service_id)
            phi, cost = problem.terms(position, fallback, 0)
            opt_out = profile.max_willingness_to_pay - phi - cost
            recommended = outcome.traveler(profile.traveler_id).utility
            gain = opt_out - recommended
            if gain > MONEY_TOLERANCE:
                witnesses.append(
                    Witness(
                        traveler_id=profile.traveler_id,
                        subclass_index=settlement.solve.subclass_index,
                        utility_gain=gain,
                        misreport="opt-out to fallback",
                    )
                )
    report = PropertyReport.build("IR", witnesses, tested, findings=findings)
    _log_report(report, telemetry)
    return report


def verify_weak_budget_balance(
    scenario: Scenario,
    config: PlannerConfig | None = None,
    *,
    rule: PaymentRule | None = None,
    telemetry: TelemetryClient | None = None,
) -> PropertyReport:
    planned = scenario if config is None or config == scenario.planner else scenario.with_planner(config)
    findings: list[str] = []
    witnesses: list[Witness] = []
    surpluses: list[float] = []
    for settlement in _settlements(planned, rule or PaymentRule("clarke-floored"), findings):
        for payment in settlement.payments:
            surplus = payment.payment - payment.operating_share
            surpluses.append(surplus)
            if surplus < -MONEY_TOLERANCE:
                witnesses.append(
                    Witness(
                        traveler_id=payment.traveler_id,
                        subclass_index=settlement.solve.subclass_index,
                        utility_gain=-surplus,
                        misreport="payment below operating cost",
                    )
                )
    aggregate = math.fsum(surpluses)
    LOGGER.info("weak budget balance aggregate_surplus=%s travelers=%s", aggregate, len(surpluses))
    report = PropertyReport.build(
        "WBB", witnesses, len(surpluses), aggregate_surplus=aggregate, findings=findings
    )
    _log_report(report, telemetry)
    return report


def _log_report(report: PropertyReport, telemetry: TelemetryClient | None) -> None:
    LOGGER.info(
        "property verified property=%s verdict=%s witnesses=%s tested=%s",
        report.property,
        report.verdict,
        len(report.witnesses),
        report.instances_tested,
    )
    if telemetry is not None:
        telemetry.emit(
            "mechanism.verify.finish",
            property=report.property,
            verdict=report.verdict,
            witnesses=len(report.witnesses),
            instances_tested=report.instances_tested,
        )
