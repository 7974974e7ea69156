import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptlock.core import (
    NoiseAlphabet,
    NoiseSchedule,
    ObjectiveWeights,
    PromptArtifact,
    RunConfig,
    Stage,
    TaskExample,
    TopKRecord,
    digest,
    load_dataset,
    resolve_lineage,
    save_dataset,
    validate_run_config,
)
from promptlock.errors import DatasetEmpty, EmptyAlphabet, InvalidArtifact, InvalidConfig


class TestPromptArtifact:
    def test_empty_text_rejected(self):
        with pytest.raises(InvalidArtifact):
            PromptArtifact("")

    def test_forward_chain(self):
        p = PromptArtifact("Summarize the text.")
        init = p.derive("<dsl/>", Stage.INITIALIZED, "m1")
        obf = init.derive("<d$l/>", Stage.OBFUSCATED)
        assert init.parent_digest == p.digest == digest("Summarize the text.")
        assert obf.is_child_of(init)
        assert obf.target_backend == "m1"

    @pytest.mark.parametrize("stage", [Stage.RECOVERED, Stage.DEOBFUSCATED])
    def test_attack_outputs_derive_only_from_obfuscated(self, stage):
        p = PromptArtifact("x")
        with pytest.raises(InvalidArtifact):
            p.derive("y", stage)
        obf = p.derive("x1", Stage.INITIALIZED).derive("x2", Stage.OBFUSCATED)
        assert obf.derive("y", stage).stage is stage

    def test_cannot_skip_initialization(self):
        with pytest.raises(InvalidArtifact):
            PromptArtifact("x").derive("y", Stage.OBFUSCATED)

    def test_roots_have_no_parent(self):
        with pytest.raises(InvalidArtifact):
            PromptArtifact("x", Stage.ORIGINAL, parent_digest="00")
        with pytest.raises(InvalidArtifact):
            PromptArtifact("x", Stage.INDUCED, parent_digest="00")

    def test_lineage_resolves_to_root(self):
        p = PromptArtifact("orig")
        init = p.derive("init", Stage.INITIALIZED)
        obf = init.derive("obf", Stage.OBFUSCATED)
        assert resolve_lineage(obf, [p, init]) == [obf, init, p]


class TestSmallTypes:
    def test_weights_defaults(self):
        w = ObjectiveWeights()
        assert (w.lambda_, w.gamma, w.use_dist_term) == (0.1, 0.1, True)
        d = ObjectiveWeights.deobfuscation()
        assert d.gamma == -0.1 and not d.use_dist_term

    def test_weights_must_be_finite(self):
        with pytest.raises(InvalidConfig):
            ObjectiveWeights(float("nan"), 0.1)

    def test_schedule_ordering(self):
        with pytest.raises(InvalidConfig):
            NoiseSchedule(initial_size=4, decay_per_epoch=8, minimum_size=10)

    def test_alphabets(self):
        assert len(NoiseAlphabet.printable_ascii()) == 95
        assert len(NoiseAlphabet.full_ascii()) == 128
        assert NoiseAlphabet.custom("aab").characters == ("a", "b")
        with pytest.raises(InvalidConfig):
            NoiseAlphabet(("a", "a"))
        with pytest.raises(EmptyAlphabet):
            NoiseAlphabet.custom("")

    def test_example_needs_labels_or_reference(self):
        with pytest.raises(InvalidArtifact):
            TaskExample("q")
        with pytest.raises(InvalidArtifact):
            TaskExample("q", reference_text="x", choices=("a", "b"))

    def test_topk_invariants(self):
        TopKRecord(0, (("a", -0.1), ("b", -0.2)))
        with pytest.raises(InvalidArtifact):
            TopKRecord(0, (("a", 0.5),))
        with pytest.raises(InvalidArtifact):
            TopKRecord(0, (("a", -0.3), ("b", -0.2)))
        with pytest.raises(InvalidArtifact):
            TopKRecord(0, (("a", -0.1), ("a", -0.2)))
        with pytest.raises(InvalidArtifact):
            TopKRecord(0, (("a", float("-inf")),))


class TestRunConfig:
    def test_empty_config_gets_defaults(self):
        c = validate_run_config({})
        assert c.epochs == 50
        assert c.candidates_per_epoch == 20
        assert (c.lambda_, c.gamma) == (0.1, 0.1)
        assert c.top_k == 10
        assert c.default_logprob == -100.0
        assert c.noise_decay == 8 and c.min_noise_size == 4
        assert c.batch_size == 1
        assert c.alphabet == "printable_ascii"

    def test_token_only_defaults_to_100_epochs(self):
        assert validate_run_config({"feedback": "token_only"}).epochs == 100

    def test_seed_only(self):
        c = validate_run_config({"seed": 42})
        assert c == validate_run_config({}).replace(seed=42)

    def test_min_above_initial_rejected(self):
        with pytest.raises(InvalidConfig):
            validate_run_config({"min_noise_size": 10, "initial_noise_size": 4})

    @pytest.mark.parametrize(
        "bad",
        [
            {"epochs": -1},
            {"top_k": 0},
            {"top_k": 21},
            {"candidates_per_epoch": 0},
            {"batch_size": 0},
            {"edit_mix": [0.5, 0.5, 0.5]},
            {"metric": "bleu"},
            {"alphabet": "custom"},
            {"default_logprob": 1.0},
            {"bogus": 1},
        ],
    )
    def test_rejects(self, bad):
        with pytest.raises(InvalidConfig):
            validate_run_config(bad)

    def test_validated_default_passes_validation(self):
        c = validate_run_config({})
        assert validate_run_config(c) == c

    def test_snapshot_shape(self):
        d = json.loads(validate_run_config({}).dumps())
        assert d["lambda"] == 0.1
        assert d["edit_mix"] == {"replace": 0.45, "insert": 0.45, "delete": 0.1}
        off = validate_run_config({"use_dist_term": False, "gamma": -0.1})
        assert json.loads(off.dumps())["lambda"] is None

    @given(
        epochs=st.integers(0, 500),
        seed=st.integers(0, 2**32),
        lam=st.floats(-5, 5, allow_nan=False),
        gamma=st.floats(-5, 5, allow_nan=False),
        top_k=st.integers(1, 20),
        dist=st.booleans(),
    )
    def test_round_trip(self, epochs, seed, lam, gamma, top_k, dist):
        c = validate_run_config(
            {"epochs": epochs, "seed": seed, "lambda": lam, "gamma": gamma, "top_k": top_k, "use_dist_term": dist}
        )
        again = validate_run_config(RunConfig.loads(c.dumps()))
        assert again.dumps() == c.dumps()


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        ds = [
            TaskExample("q1", ("a",), "ref"),
            TaskExample("q2", reference_text="B", choices=("A", "B")),
        ]
        save_dataset(ds, tmp_path / "d.jsonl")
        assert list(load_dataset(tmp_path / "d.jsonl")) == ds

    def test_empty_file(self, tmp_path):
        (tmp_path / "d.jsonl").write_text("\n")
        with pytest.raises(DatasetEmpty):
            load_dataset(tmp_path / "d.jsonl")

    def test_unknown_field(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"query": "q", "reference_text": "r", "extra": 1}\n')
        with pytest.raises(InvalidArtifact):
            load_dataset(tmp_path / "d.jsonl")
