import random

import numpy as np
import pytest

from lmkg.encoders import EncodingSpec
from lmkg.framework import (
    Estimate,
    ModelRegistry,
    NoRouteError,
    OutlierBuffer,
    RegistryEntry,
    RegistryError,
    bucket_index,
    bucket_label,
    estimate,
    evaluate_workload,
    load_model,
    model_from_bytes,
    model_info,
    model_to_bytes,
    qerror,
    save_model,
)
from lmkg.lmkg_s import TrainConfigS, estimate_s, train_s
from lmkg.lmkg_u import TrainConfigU, estimate_u, train_u
from lmkg.patterns import Slot, canonicalize_pattern, make_chain, make_star
from lmkg.sampler import (
    LabeledQuery,
    MaskPolicy,
    SamplerConfig,
    enumerate_instances,
    generate_training_set,
)
from lmkg.serialize import ChecksumError, VersionMismatchError
from synth import random_kg


@pytest.fixture(scope="module")
def trained_pair():
    """One S model (star+chain k<=2, sg) and one U model (chain k=2)."""
    kg = random_kg(random.Random(1), 150, 30, 3)
    spec = EncodingSpec.from_kg(kg)
    sdata = []
    for topology in ("star", "chain"):
        config = SamplerConfig(
            topology, 2, count=30, mode="uniform", supervised=True, mask=MaskPolicy(prob=0.5), seed=3
        )
        sdata.extend(generate_training_set(kg, config))
    smodel = train_s(
        sdata, spec, "sg",
        TrainConfigS(epochs=30, batch_size=32, hidden=(32,), seed=0),
        shapes={("star", 1), ("star", 2), ("chain", 1), ("chain", 2)},
    )
    pop = enumerate_instances(kg, "chain", 2, 100_000)
    umodel = train_u(pop, kg, TrainConfigU(epochs=20, batch_size=32, hidden_width=32, blocks=1, embed_dim=8, seed=0))
    return kg, sdata, smodel, umodel


class TestMetrics:
    def test_qerror_definition(self):
        assert qerror(10, 5) == 2.0
        assert qerror(5, 10) == 2.0
        assert qerror(0.2, 1) == 1.0  # clamped below one
        assert qerror(3, 0) == 3.0

    def test_bucket_arithmetic(self):
        assert bucket_index(3) == 0
        assert bucket_index(30) == 2
        assert bucket_index(1) == 0
        assert bucket_index(5) == 1
        assert bucket_index(125) == 3
        assert bucket_label(0) == "[5^0,5^1)"


class TestRegistry:
    def test_route_by_range(self, trained_pair):
        _, _, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        qp = canonicalize_pattern(make_star(Slot.variable(0), [(Slot.bound(1), Slot.bound(2))]))
        assert registry.route(qp).kind == "lmkg_s"

    def test_no_route(self, trained_pair):
        _, _, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        chain3 = make_chain(
            [Slot.variable(0), Slot.variable(1), Slot.variable(2), Slot.variable(3)],
            [Slot.bound(1)] * 3,
        )
        with pytest.raises(NoRouteError):
            registry.route(chain3)

    def test_overlap_rejected(self, trained_pair):
        _, _, smodel, umodel = trained_pair
        with pytest.raises(RegistryError, match="overlap"):
            ModelRegistry.from_models([smodel, umodel])  # both cover chain k=2

    def test_declared_coverage_gap_rejected(self, trained_pair):
        _, _, _, umodel = trained_pair
        with pytest.raises(RegistryError, match="gap"):
            ModelRegistry(
                [RegistryEntry("lmkg_u", frozenset(["chain"]), 2, 2, umodel)],
                coverage={("chain", 2), ("star", 2)},
            )

    def test_type_and_size_grouping_routes_first_match(self, trained_pair):
        _, _, _, umodel = trained_pair
        registry = ModelRegistry.from_models([umodel], grouping="by_type_and_size")
        qp = canonicalize_pattern(
            make_chain([Slot.variable(0), Slot.variable(1), Slot.variable(2)], [Slot.bound(1), Slot.bound(1)])
        )
        assert registry.route(qp).model is umodel


class TestBuffer:
    def test_keeps_largest_cards(self, trained_pair):
        _, sdata, _, _ = trained_pair
        buf = OutlierBuffer.from_training(sdata, capacity=5)
        assert len(buf) == 5
        kept = sorted((lq.card for lq in sdata), reverse=True)[:5]
        stored = sorted((buf.lookup(lq.pattern) for lq in sdata if buf.lookup(lq.pattern) is not None), reverse=True)
        assert stored == kept

    def test_buffer_short_circuits_estimate(self, trained_pair):
        _, sdata, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        buf = OutlierBuffer.from_training(sdata, capacity=5)
        target = max(sdata, key=lambda lq: lq.card)
        res = estimate(registry, target.pattern, buffer=buf)
        assert res.provenance == "buffer"
        assert res.value == float(target.card)

    def test_buffer_disable_option(self, trained_pair):
        _, sdata, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        buf = OutlierBuffer.from_training(sdata, capacity=5)
        target = max(sdata, key=lambda lq: lq.card)
        res = estimate(registry, target.pattern, buffer=buf, use_buffer=False)
        assert res.provenance == "lmkg_s"


class TestEvaluate:
    def test_perfect_estimator_fixture(self, trained_pair):
        _, sdata, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        buf = OutlierBuffer.from_training(sdata, capacity=len(sdata))
        report = evaluate_workload(registry, sdata, buffer=buf)
        assert all(r.q_error == 1.0 for r in report.rows)
        assert report.aggregates["max"] == 1.0
        assert all(r.provenance == "buffer" for r in report.rows)

    def test_constant_one_estimator_aggregates(self):
        # q-errors for truths {1, 5, 25} under a constant-1 estimator
        truths = [1, 5, 25]
        qs = [qerror(1.0, t) for t in truths]
        assert qs == [1.0, 5.0, 25.0]
        assert sum(qs) / 3 == pytest.approx(31 / 3)

    def test_bucket_partition_and_failures(self, trained_pair):
        _, sdata, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        chain3 = LabeledQuery(
            canonicalize_pattern(
                make_chain(
                    [Slot.variable(0), Slot.variable(1), Slot.variable(2), Slot.variable(3)],
                    [Slot.bound(1)] * 3,
                )
            ),
            4,
        )
        report = evaluate_workload(registry, sdata + [chain3])
        assert report.failures == 1
        assert len(report.rows) == len(sdata)
        assert sum(b["count"] for b in report.buckets) == len(report.rows)
        assert all(r.q_error >= 1.0 and np.isfinite(r.q_error) for r in report.rows)
        assert all(r.millis >= 0.0 for r in report.rows)

    def test_report_files(self, trained_pair, tmp_path):
        _, sdata, smodel, _ = trained_pair
        registry = ModelRegistry.from_models([smodel])
        report = evaluate_workload(registry, sdata[:10], config={"run": "unit"})
        report.write_csv(tmp_path / "r.csv")
        report.write_json(tmp_path / "r.json")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 11  # header + rows
        import json

        payload = json.loads((tmp_path / "r.json").read_text())
        assert payload["evaluated"] == 10
        assert payload["config"]["run"] == "unit"
        assert payload["model_sizes_bytes"]


class TestPersistence:
    def test_s_round_trip_estimates(self, trained_pair, tmp_path):
        kg, sdata, smodel, _ = trained_pair
        path = tmp_path / "s.lmkgm"
        size = save_model(smodel, path)
        assert size == path.stat().st_size
        loaded = load_model(path)
        rng = random.Random(5)
        for _ in range(100):
            pairs = [(Slot.bound(rng.randint(1, kg.b)), Slot.bound(rng.randint(1, kg.d))) for _ in range(2)]
            qp = canonicalize_pattern(make_star(Slot.variable(0), pairs))
            assert estimate_s(loaded, qp).value == estimate_s(smodel, qp).value

    def test_u_round_trip_estimates(self, trained_pair, tmp_path):
        kg, _, _, umodel = trained_pair
        path = tmp_path / "u.lmkgm"
        save_model(umodel, path)
        loaded = load_model(path)
        qp = canonicalize_pattern(
            make_chain([Slot.variable(0), Slot.variable(1), Slot.bound(2)], [Slot.bound(1), Slot.bound(1)])
        )
        a = estimate_u(umodel, qp, num_samples=200, seed=9)
        b = estimate_u(loaded, qp, num_samples=200, seed=9)
        assert a == b

    def test_corrupted_byte_detected(self, trained_pair, tmp_path):
        _, _, smodel, _ = trained_pair
        path = tmp_path / "s.lmkgm"
        save_model(smodel, path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 3] ^= 0x01
        with pytest.raises(ChecksumError):
            model_from_bytes(bytes(raw))

    def test_version_mismatch_detected(self, trained_pair):
        _, _, smodel, _ = trained_pair
        raw = bytearray(model_to_bytes(smodel))
        raw[6] = 99  # version field follows the 6-byte magic
        import zlib, struct

        body = bytes(raw[:-4])
        patched = body + struct.pack("<I", zlib.crc32(body))
        with pytest.raises(VersionMismatchError):
            model_from_bytes(patched)

    def test_info_reports_file_size(self, trained_pair, tmp_path):
        _, _, smodel, umodel = trained_pair
        for name, model in (("s", smodel), ("u", umodel)):
            path = tmp_path / f"{name}.lmkgm"
            save_model(model, path)
            info = model_info(path)
            assert info["file_bytes"] == path.stat().st_size
            assert info["kind"] == name
            assert info["parameters"] > 0
