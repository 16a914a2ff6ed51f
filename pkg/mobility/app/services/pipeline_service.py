from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Literal

from mobility.app.errors import PlanningTooLargeError
from mobility.app.models.result_contracts import (
    CoordinateResults,
    OverrideValue,
    ResultsEnvelope,
    RunManifest,
    SearchStatisticsRow,
    SolveResults,
    SubclassRow,
    TravelerRow,
    VerifyResults,
    WitnessRow,
)
from mobility.app.repositories.common import canonical_json, sha256_hex
from mobility.app.repositories.results_repository import write_trajectory_log
from mobility.app.repositories.scenario_repository import load_scenario, scenario_to_document
from mobility.app.repositories.team_model_repository import (
    load_team_model,
    team_model_to_document,
)
from mobility.app.services.coordination.intersection import (
    IntersectionParams,
    build_intersection_scenario,
)
from mobility.app.services.coordination.model import TeamModel
from mobility.app.services.coordination.planning import open_loop_value, solve_planning
from mobility.app.services.coordination.simulation import simulate_team
from mobility.app.services.market import (
    MONEY_TOLERANCE,
    PlannerConfig,
    discount_valuation,
    equity_gini,
    evaluate_outcome,
)
from mobility.app.services.mechanism import (
    MisreportGrid,
    PaymentMode,
    PaymentRule,
    PropertyReport,
    settle_subclass,
    verify_incentive_compatibility,
    verify_individual_rationality,
    verify_weak_budget_balance,
)
from mobility.app.services.network import Scenario, Subclass, partition_subclasses
from mobility.app.services.solver import SolveResult, solve_all
from mobility.app.telemetry import TelemetryClient

LOGGER = logging.getLogger("mobility.pipeline")

PACKAGE_NAME = "mobility-planner"
VerifyProperty = Literal["ic", "ir", "wbb"]
UNPRICED_NOTE = "payments not computed: omega1 = 0 leaves no money scale for the objective"


def tool_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "0.0.0+local"


@dataclass(frozen=True)
class PlannerOverrides:
    """Per-run planner overrides; `None` keeps the scenario value, `"off"` disables equity."""

    omega1: float | None = None
    omega2: float | None = None
    equity_bound: float | Literal["off"] | None = None
    co_traveler_penalty: float | None = None

    def apply(self, config: PlannerConfig) -> PlannerConfig:
        equity = config.equity_bound
        if self.equity_bound == "off":
            equity = None
        elif self.equity_bound is not None:
            equity = self.equity_bound
        return PlannerConfig(
            omega1=config.omega1 if self.omega1 is None else self.omega1,
            omega2=config.omega2 if self.omega2 is None else self.omega2,
            equity_bound=equity,
            co_traveler_penalty=(
                config.co_traveler_penalty
                if self.co_traveler_penalty is None
                else self.co_traveler_penalty
            ),
            congestion_slopes=config.congestion_slopes,
        )

    def as_manifest(self) -> dict[str, OverrideValue]:
        values: dict[str, OverrideValue] = {
            "omega1": self.omega1,
            "omega2": self.omega2,
            "equity_gmax": self.equity_bound,
            "gamma": self.co_traveler_penalty,
        }
        return {key: value for key, value in values.items() if value is not None}


@dataclass(frozen=True)
class CoordinateRequest:
    model_path: Path | None = None
    intersection: IntersectionParams | None = None
    episodes: int = 1000
    trajectory_log: Path | None = None


@dataclass(frozen=True)
class PipelineRun:
    envelope: ResultsEnvelope
    run_hash: str
    exit_code: int = 0
    notes: tuple[str, ...] = field(default=())


class MobilityPipeline:
    """Drives the solve, verify and coordinate runs and assembles their results envelopes."""

    def __init__(
        self,
        *,
        workers: int = 1,
        brute_force_limit: int = 1_000_000,
        planning_profile_limit: int = 65_536,
        ic_extra_samples: int = 25,
        telemetry: TelemetryClient | None = None,
    ) -> None:
        self._workers = workers
        self._brute_force_limit = brute_force_limit
        self._planning_profile_limit = planning_profile_limit
        self._ic_extra_samples = ic_extra_samples
        self._telemetry = telemetry or TelemetryClient.disabled()

    def with_workers(self, workers: int) -> MobilityPipeline:
        return MobilityPipeline(
            workers=workers,
            brute_force_limit=self._brute_force_limit,
            planning_profile_limit=self._planning_profile_limit,
            ic_extra_samples=self._ic_extra_samples,
            telemetry=self._telemetry,
        )

    def solve(
        self,
        scenario_path: Path,
        *,
        seed: int,
        overrides: PlannerOverrides | None = None,
        payment_mode: PaymentMode = "clarke",
    ) -> PipelineRun:
        resolved = overrides or PlannerOverrides()
        scenario = self._planned(load_scenario(scenario_path), resolved)
        rule = PaymentRule(payment_mode) if scenario.planner.omega1 > 0 else None
        notes: list[str] = [] if rule is not None else [UNPRICED_NOTE]
        solved = solve_all(scenario, workers=self._workers, telemetry=self._telemetry)
        partition = partition_subclasses(scenario.travelers)
        rows = [
            self._subclass_row(subclass, result, scenario, rule)
            for subclass, result in zip(partition.subclasses, solved, strict=True)
        ]
        results = SolveResults(
            payment_mode=payment_mode,
            subclasses=rows,
            total_objective=math.fsum(row.objective for row in rows if row.objective is not None),
            total_welfare=math.fsum(row.welfare for row in rows if row.welfare is not None),
            notes=notes,
        )
        manifest = self._manifest(
            "solve",
            scenario_path=scenario_path,
            seed=seed,
            overrides={**resolved.as_manifest(), "payment_mode": payment_mode},
            inputs=scenario_to_document(scenario).model_dump(mode="json"),
        )
        return self._finish(manifest, results, exit_code=0, notes=notes)

    def verify(
        self,
        scenario_path: Path,
        property_name: VerifyProperty,
        *,
        seed: int,
        overrides: PlannerOverrides | None = None,
        payment_mode: PaymentMode = "clarke",
    ) -> PipelineRun:
        resolved = overrides or PlannerOverrides()
        scenario = self._planned(load_scenario(scenario_path), resolved)
        rule = PaymentRule(payment_mode)
        if property_name == "ic":
            report = verify_incentive_compatibility(
                scenario,
                grid=MisreportGrid(extra_samples=self._ic_extra_samples),
                seed=seed,
                rule=rule,
                workers=self._workers,
                limit=self._brute_force_limit,
                telemetry=self._telemetry,
            )
        elif property_name == "ir":
            report = verify_individual_rationality(scenario, rule=rule, telemetry=self._telemetry)
        else:
            report = verify_weak_budget_balance(scenario, rule=rule, telemetry=self._telemetry)
        manifest = self._manifest(
            "verify",
            scenario_path=scenario_path,
            seed=seed,
            overrides={
                **resolved.as_manifest(),
                "payment_mode": payment_mode,
                "property": property_name,
            },
            inputs=scenario_to_document(scenario).model_dump(mode="json"),
        )
        return self._finish(
            manifest,
            _verify_results(report, payment_mode),
            exit_code=0 if report.verdict == "holds-on-tested-grid" else 2,
        )

    def coordinate(self, request: CoordinateRequest, *, seed: int) -> PipelineRun:
        model, overrides = self._team_model(request)
        strategy = solve_planning(
            model,
            profile_limit=self._planning_profile_limit,
            telemetry=self._telemetry,
        )
        notes: list[str] = []
        try:
            baseline: float | None = open_loop_value(model, limit=self._brute_force_limit).value
        except PlanningTooLargeError as exc:
            baseline = None
            notes.append(f"open-loop baseline skipped: {exc}")
        simulation = simulate_team(
            model,
            strategy,
            request.episodes,
            seed,
            workers=self._workers,
            record_trajectories=request.trajectory_log is not None,
            telemetry=self._telemetry,
        )
        if request.trajectory_log is not None:
            write_trajectory_log(model, simulation.trajectories, request.trajectory_log)
        results = CoordinateResults(
            horizon=model.horizon,
            members=[member.name for member in model.members],
            delay=model.delay,
            value=strategy.value,
            open_loop_value=baseline,
            episodes=simulation.episodes,
            empirical_mean_cost=simulation.mean_cost,
            stderr=simulation.stderr,
            collisions=simulation.failure_episodes,
            beliefs_evaluated=strategy.planner.stage_count,
            trajectory_log=str(request.trajectory_log) if request.trajectory_log else None,
        )
        manifest = self._manifest(
            "coordinate",
            scenario_path=request.model_path,
            seed=seed,
            overrides={**overrides, "episodes": request.episodes},
            inputs=team_model_to_document(model).model_dump(mode="json"),
        )
        return self._finish(manifest, results, exit_code=0, notes=notes)

    def _planned(self, scenario: Scenario, overrides: PlannerOverrides) -> Scenario:
        config = overrides.apply(scenario.planner)
        if config == scenario.planner:
            return scenario
        return scenario.with_planner(config)

    def _team_model(self, request: CoordinateRequest) -> tuple[TeamModel, dict[str, OverrideValue]]:
        if request.model_path is not None:
            return load_team_model(request.model_path), {}
        params = request.intersection or IntersectionParams()
        return build_intersection_scenario(params), {
            "cells": params.cells,
            "delay": params.delay,
            "noise": params.hdv_noise,
            "stall_probability": params.stall_probability,
            "start_jitter": params.start_jitter,
            "intersection": True,
        }

    def _subclass_row(
        self,
        subclass: Subclass,
        result: SolveResult,
        scenario: Scenario,
        rule: PaymentRule | None,
    ) -> SubclassRow:
        statistics = SearchStatisticsRow(
            nodes_expanded=result.statistics.nodes_expanded,
            nodes_pruned=result.statistics.nodes_pruned,
            leaves_evaluated=result.statistics.leaves_evaluated,
            root_lower_bound=result.statistics.root_lower_bound,
        )
        row = SubclassRow(
            index=result.subclass_index,
            origin=subclass.origin,
            destination=subclass.destination,
            traveler_ids=list(result.traveler_ids),
            status=result.status,
            statistics=statistics,
        )
        if result.status != "optimal":
            return row
        externalities: dict[int, float] | None = None
        if rule is None:
            assert result.assignment is not None
            outcome = evaluate_outcome(result.assignment, {}, scenario)
        else:
            settlement = settle_subclass(subclass, scenario, rule=rule, solution=result)
            outcome = settlement.outcome
            assert outcome is not None
            externalities = {
                payment.traveler_id: payment.externality for payment in settlement.payments
            }
        travelers: list[TravelerRow] = []
        for traveler_outcome in outcome.travelers:
            traveler = scenario.traveler(traveler_outcome.traveler_id)
            travelers.append(
                TravelerRow(
                    traveler_id=traveler_outcome.traveler_id,
                    service_id=traveler_outcome.service_id,
                    service_name=scenario.network.service(traveler_outcome.service_id).name,
                    co_travelers=traveler_outcome.co_travelers,
                    experienced_travel_time=traveler_outcome.experienced_travel_time,
                    inconvenience=traveler_outcome.inconvenience,
                    valuation=traveler_outcome.valuation,
                    operating_cost=traveler_outcome.operating_cost,
                    payment=None if externalities is None else traveler_outcome.payment,
                    externality=(
                        None if externalities is None else externalities[traveler_outcome.traveler_id]
                    ),
                    utility=None if externalities is None else traveler_outcome.utility,
                    discount_satisfied=(
                        traveler_outcome.valuation
                        >= discount_valuation(traveler) - MONEY_TOLERANCE
                    ),
                )
            )
        return row.model_copy(
            update={
                "objective": outcome.objective,
                "welfare": outcome.welfare,
                "gini": equity_gini(outcome),
                "travelers": travelers,
            }
        )

    def _manifest(
        self,
        command: Literal["solve", "verify", "coordinate"],
        *,
        scenario_path: Path | None,
        seed: int,
        overrides: dict[str, OverrideValue],
        inputs: object,
    ) -> RunManifest:
        return RunManifest(
            scenario_path=str(scenario_path) if scenario_path is not None else None,
            command=command,
            master_seed=seed,
            config_overrides=overrides,
            tool_version=tool_version(),
            input_hash=sha256_hex(canonical_json(inputs)),
        )

    def _finish(
        self,
        manifest: RunManifest,
        results: SolveResults | VerifyResults | CoordinateResults,
        *,
        exit_code: int,
        notes: list[str] | None = None,
    ) -> PipelineRun:
        run_hash = sha256_hex(canonical_json(manifest.model_dump(mode="json")))
        LOGGER.info(
            "pipeline run finished command=%s run_hash=%s exit_code=%s",
            manifest.command,
            run_hash[:12],
            exit_code,
        )
        self._telemetry.emit(
            "cli.command.finish",
            command=manifest.command,
            run_hash=run_hash[:12],
            exit_code=exit_code,
        )
        return PipelineRun(
            envelope=ResultsEnvelope(manifest=manifest, results=results),
            run_hash=run_hash,
            exit_code=exit_code,
            notes=tuple(notes or ()),
        )


def _verify_results(report: PropertyReport, payment_mode: str) -> VerifyResults:
    return VerifyResults(
        property=report.property,
        payment_mode=payment_mode,
        verdict=report.verdict,
        instances_tested=report.instances_tested,
        witnesses=[
            WitnessRow(
                traveler_id=witness.traveler_id,
                subclass_index=witness.subclass_index,
                utility_gain=witness.utility_gain,
                misreport=witness.misreport,
                grid_index=witness.grid_index,
            )
            for witness in report.witnesses
        ],
        aggregate_surplus=report.aggregate_surplus,
        findings=list(report.findings),
    )


def _table(headers: list[str], rows: list[list[str]]) -> list[str]:
    widths = [
        max([len(header), *(len(row[column]) for row in rows)])
        for column, header in enumerate(headers)
    ]
    lines = ["  ".join(header.ljust(width) for header, width in zip(headers, widths, strict=True))]
    lines.extend(
        "  ".join(cell.rjust(width) for cell, width in zip(row, widths, strict=True))
        for row in rows
    )
    return lines


def _number(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_report(envelope: ResultsEnvelope) -> str:
    """Aligned plain-text view of a results envelope, for stdout."""
    results = envelope.results
    lines: list[str] = []
    if isinstance(results, SolveResults):
        lines.append(f"payment mode: {results.payment_mode}")
        lines.extend(f"note: {note}" for note in results.notes)
        for subclass in results.subclasses:
            lines.append(
                f"subclass {subclass.index} {subclass.origin}->{subclass.destination}: "
                f"{subclass.status} objective={_number(subclass.objective)} "
                f"gini={_number(subclass.gini)}"
            )
            lines.extend(
                _table(
                    ["traveler", "service", "theta", "phi", "payment", "utility"],
                    [
                        [
                            str(row.traveler_id),
                            row.service_name,
                            _number(row.experienced_travel_time),
                            _number(row.inconvenience),
                            _number(row.payment),
                            _number(row.utility),
                        ]
                        for row in subclass.travelers
                    ],
                )
            )
        lines.append(
            f"total objective={_number(results.total_objective)} "
            f"welfare={_number(results.total_welfare)}"
        )
    elif isinstance(results, VerifyResults):
        lines.append(
            f"{results.property} ({results.payment_mode}): {results.verdict} "
            f"tested={results.instances_tested}"
        )
        if results.aggregate_surplus is not None:
            lines.append(f"aggregate surplus={_number(results.aggregate_surplus)}")
        if results.witnesses:
            lines.extend(
                _table(
                    ["traveler", "subclass", "gain", "misreport"],
                    [
                        [
                            str(witness.traveler_id),
                            str(witness.subclass_index),
                            _number(witness.utility_gain),
                            witness.misreport,
                        ]
                        for witness in results.witnesses
                    ],
                )
            )
        lines.extend(f"finding: {finding}" for finding in results.findings)
    else:
        lines.append(
            f"team {','.join(results.members)} horizon={results.horizon} delay={results.delay}"
        )
        lines.append(f"optimal value V0={_number(results.value)}")
        lines.append(f"open-loop value={_number(results.open_loop_value)}")
        lines.append(
            f"episodes={results.episodes} mean cost={_number(results.empirical_mean_cost)} "
            f"stderr={_number(results.stderr)} collisions={results.collisions}"
        )
        if results.trajectory_log:
            lines.append(f"trajectory log: {results.trajectory_log}")
    return "\n".join(lines) + "\n"
