from __future__ import annotations

import random
from decimal import Decimal

import pytest

from chartbridge.backends import BackendUnavailable, ScriptedTextBackend, content_digest
from chartbridge.context import build_context, plan_fanout
from chartbridge.gateway import (
    BackendError,
    EmptyRegistry,
    ModelGateway,
    ModelProfile,
    ProfileMismatch,
    RequestTelemetry,
    cost,
    execute,
    route,
)

from conftest import DelayedBackend


def pkg_with_tokens(system_query: int, record: int):
    return build_context("r" * record * 4, "q" * (system_query // 2) * 4,
                         "s" * (system_query - system_query // 2) * 4)


class TestRoute:
    def test_smallest_fitting_window(self, registry):
        pkg = pkg_with_tokens(2_000, 48_000)  # total 50k, +8k reserve -> needs 58k
        profile, plan = route(pkg, registry, 8_000)
        assert profile.name == "mid-128k"
        assert plan.mode == "single"

    def test_price_tie_break(self):
        models = [
            ModelProfile("pricier", 128_000, Decimal("0.003")),
            ModelProfile("cheaper", 128_000, Decimal("0.002")),
        ]
        profile, _ = route(pkg_with_tokens(1_000, 10_000), models, 8_000)
        assert profile.name == "cheaper"

    def test_name_tie_break(self):
        models = [
            ModelProfile("bravo", 128_000, Decimal("0.002")),
            ModelProfile("alpha", 128_000, Decimal("0.002")),
        ]
        profile, _ = route(pkg_with_tokens(1_000, 10_000), models, 8_000)
        assert profile.name == "alpha"

    def test_oversized_goes_to_largest_with_map_reduce(self, registry):
        profile, plan = route(pkg_with_tokens(2_000, 2_000_000), registry, 8_000)
        assert profile.name == "big-1m"
        assert plan.mode == "map_reduce"

    def test_empty_registry(self):
        with pytest.raises(EmptyRegistry):
            route(pkg_with_tokens(100, 100), [], 8_000)

    def test_monotone_in_total_tokens(self, registry):
        rng = random.Random(13)
        windows = sorted(m.window_tokens for m in registry)
        last_window = 0
        for record in sorted(rng.randint(0, 1_200_000) for _ in range(40)):
            profile, _ = route(pkg_with_tokens(1_000, record), registry, 8_000)
            assert profile.window_tokens >= last_window
            last_window = profile.window_tokens
        assert last_window == windows[-1]


class TestExecute:
    def test_single_plan_one_request(self):
        backend = ScriptedTextBackend(default="OK")
        plan = plan_fanout(pkg_with_tokens(100, 100), 10_000, 1_000, model_name="m")
        result = execute(plan, backend)
        assert result.response == "OK"
        assert len(result.telemetry) == 1
        assert result.telemetry[0].error_code is None

    def test_map_reduce_four_requests_ordered(self):
        backend = ScriptedTextBackend(default="part")
        pkg = pkg_with_tokens(200, 3_000)
        plan = plan_fanout(pkg, 1_500, 100, model_name="m")
        assert plan.mode == "map_reduce" and len(plan.chunks) == 3
        result = execute(plan, backend)
        assert len(result.telemetry) == 4
        reduce_call = backend.calls[-1][1]
        assert (
            reduce_call.index("[Answer for chunk 0]")
            < reduce_call.index("[Answer for chunk 1]")
            < reduce_call.index("[Answer for chunk 2]")
        )

    def test_chunk_answers_keyed_to_their_chunk(self):
        pkg = pkg_with_tokens(200, 3_000)
        plan = plan_fanout(pkg, 1_500, 100, model_name="m")
        backend = ScriptedTextBackend(default="?")
        for chunk in plan.chunks:
            content = f"[Patient record, chunk {chunk.index + 1} of 3]\n{chunk.text}\n\n{plan.query}"
            backend.responses[content_digest(content)] = f"answer-{chunk.index}"
        result = execute(plan, backend)
        reduce_call = backend.calls[-1][1]
        for i in range(3):
            assert f"[Answer for chunk {i}]\nanswer-{i}" in reduce_call
        assert result.response == "?"

    def test_failed_chunk_retried_then_fails_generation(self):
        rng = random.Random(2)
        record = "".join(rng.choice("abcdefgh ") for _ in range(12_000))
        pkg = build_context(record, "query", "sys")
        plan = plan_fanout(pkg, 1_500, 100, model_name="m")
        # the middle 64 chars of chunk 1 sit outside both overlap regions
        middle = len(plan.chunks[1].text) // 2
        marker = plan.chunks[1].text[middle : middle + 64]
        assert sum(marker in c.text for c in plan.chunks) == 1

        class FlakyBackend:
            def complete(self, system_prompt, user_content):
                if marker in user_content:
                    raise BackendUnavailable("boom")
                return "fine"

        with pytest.raises(BackendError) as err:
            execute(plan, FlakyBackend(), max_parallel=1)
        failed = [t for t in err.value.telemetry if t.error_code]
        assert len(failed) == 2  # first attempt plus one retry
        assert {t.request_id for t in failed} == {"req-L0-c1", "req-L0-c1r"}

    def test_single_failure_records_both_attempts(self):
        class DeadBackend:
            def complete(self, system_prompt, user_content):
                raise BackendUnavailable("down")

        plan = plan_fanout(pkg_with_tokens(100, 100), 10_000, 1_000, model_name="m")
        with pytest.raises(BackendError) as err:
            execute(plan, DeadBackend())
        assert [bool(t.error_code) for t in err.value.telemetry] == [True, True]

    def test_reassembly_deterministic_across_completion_orders(self):
        pkg = pkg_with_tokens(200, 4_000)
        plan = plan_fanout(pkg, 1_500, 100, model_name="m")
        reference = None
        for seed in range(20):
            inner = ScriptedTextBackend(default="ans")
            backend = DelayedBackend(inner, seed=seed)
            result = execute(plan, backend, max_parallel=4, request_prefix="shuffle")
            reduce_input = inner.calls[-1][1]
            if reference is None:
                reference = (result.response, reduce_input)
            assert (result.response, reduce_input) == reference

    def test_recursive_reduce_when_answers_exceed_capacity(self):
        pkg = pkg_with_tokens(20, 2_000)
        plan = plan_fanout(pkg, 270, 50, model_name="m")
        assert plan.mode == "map_reduce"
        long_answer = "a" * 2_000  # each chunk answer alone exceeds capacity
        backend = ScriptedTextBackend(default=long_answer)
        backend.responses = {}
        result = execute(plan, backend, max_parallel=1)
        assert result.response == long_answer
        levels = {t.request_id.split("-")[1] for t in result.telemetry if "-c" in t.request_id}
        assert "L1" in levels  # at least one extra synthesis round ran


class TestCost:
    def test_arithmetic(self):
        profile = ModelProfile("m", 100_000, Decimal("0.002"), Decimal("0.008"))
        rec = RequestTelemetry("r", "m", 10, tokens_sent=10_000, tokens_received=1_000)
        assert cost(rec, profile) == Decimal("0.028000")

    def test_zero_tokens(self):
        profile = ModelProfile("m", 100_000, Decimal("0.002"), Decimal("0.008"))
        assert cost(RequestTelemetry("r", "m", 0, 0, 0), profile) == Decimal("0")

    def test_rounding_half_up_six_places(self):
        profile = ModelProfile("m", 100_000, Decimal("0.0000035"), Decimal("0"))
        rec = RequestTelemetry("r", "m", 0, tokens_sent=500, tokens_received=0)
        # 0.5 * 0.0000035 = 0.00000175 -> rounds half-up to 0.000002
        assert cost(rec, profile) == Decimal("0.000002")

    def test_profile_mismatch(self):
        profile = ModelProfile("m", 100_000)
        with pytest.raises(ProfileMismatch):
            cost(RequestTelemetry("r", "other", 0, 0, 0), profile)

    def test_linear_in_tokens(self):
        profile = ModelProfile("m", 100_000, Decimal("0.002"), Decimal("0.008"))
        one = cost(RequestTelemetry("r", "m", 0, 3_000, 700), profile)
        two = cost(RequestTelemetry("r", "m", 0, 6_000, 1_400), profile)
        assert two == one * 2

    def test_synthetic_month_totals_1500(self):
        # 9,375 queries, each 80k tokens sent at $0.002/1k -> $0.16 apiece.
        profile = ModelProfile("m", 1_000_000, Decimal("0.002"), Decimal("0.008"))
        per_query = cost(RequestTelemetry("r", "m", 0, 80_000, 0), profile)
        assert per_query == Decimal("0.16")
        total = per_query * 9_375
        assert total == Decimal("1500.00")


class TestModelGateway:
    def test_generate_routes_and_prices(self, registry):
        gateway = ModelGateway(registry, ScriptedTextBackend(default="OK"), output_reserve=1_000)
        response, telemetry, profile = gateway.generate(pkg_with_tokens(100, 1_000))
        assert response == "OK"
        assert profile.name == "small-8k"
        assert telemetry[0].cost == cost(telemetry[0], profile)

    def test_preferred_model_bypasses_routing(self, registry):
        gateway = ModelGateway(registry, ScriptedTextBackend(default="OK"), output_reserve=1_000)
        _, _, profile = gateway.generate(pkg_with_tokens(100, 1_000), prefer="big-1m")
        assert profile.name == "big-1m"
