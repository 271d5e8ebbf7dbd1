import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)

CORPUS_SIZES = {"n_train": 500, "n_test": 200, "seed": 0}


@dataclass
class ToyStack:
    root: Path
    bundle: object
    train_clips: list
    test_clips: list

    @property
    def train_manifest(self) -> Path:
        return self.root / "corpus" / "train.jsonl"

    @property
    def test_manifest(self) -> Path:
        return self.root / "corpus" / "test.jsonl"

    @property
    def models(self) -> Path:
        return self.root / "models"


def _stamp() -> dict:
    from latentuap.models.training import ToyTrainConfig

    return {"corpus": CORPUS_SIZES, "train": asdict(ToyTrainConfig(seed=CORPUS_SIZES["seed"]))}


@pytest.fixture(scope="session")
def toy_stack(request) -> ToyStack:
    """Toy corpus plus trained models, built once and cached between sessions.

    Set LATENTUAP_TOY_CACHE to pin the cache directory.
    """
    from latentuap.audio_io import read_manifest
    from latentuap.models import corpus, training
    from latentuap.models.bundle import load_bundle

    env = os.environ.get("LATENTUAP_TOY_CACHE")
    root = Path(env) if env else Path(request.config.cache.mkdir("toy_stack"))
    stamp_path = root / "stamp.json"
    stamp = json.loads(json.dumps(_stamp()))
    fresh = stamp_path.exists() and json.loads(stamp_path.read_text()) == stamp and (root / "models" / "bundle.json").exists()
    if not fresh:
        logging.getLogger("latentuap").info("building toy stack under %s", root)
        corpus.build_corpus(root / "corpus", CORPUS_SIZES["n_train"], CORPUS_SIZES["n_test"], CORPUS_SIZES["seed"])
        # gates are asserted by their own tests, so a miss must not break the fixture
        training.train_toy_models(read_manifest(root / "corpus" / "train.jsonl"), CORPUS_SIZES["seed"], out_dir=root / "models", check_gates=False)
        stamp_path.write_text(json.dumps(stamp, sort_keys=True))
    return ToyStack(
        root,
        load_bundle(root / "models"),
        read_manifest(root / "corpus" / "train.jsonl").load_all(),
        read_manifest(root / "corpus" / "test.jsonl").load_all(),
    )


TARGET_TEXT = "open the door"


@pytest.fixture(scope="session")
def target(toy_stack):
    from latentuap import preparation

    return preparation.search_target_audio(TARGET_TEXT, toy_stack.bundle, n=10, s=0.9)


class UapRuns:
    """Perturbations trained at most once per session and shared between test modules."""

    def __init__(self, stack, target):
        self.stack, self.target = stack, target
        self._cache = {}

    def train(self, **kw):
        from latentuap import optimizer

        key = tuple(sorted(kw.items()))
        if key not in self._cache:
            t0 = time.perf_counter()
            art, trace = optimizer.train(optimizer.TrainConfig(**kw), self.stack.train_clips, self.target, self.stack.bundle, created_at="test")
            self._cache[key] = (art, trace, time.perf_counter() - t0)
        return self._cache[key]

    def protected(self, **kw):
        from latentuap import evaluation

        key = ("protected",) + tuple(sorted(kw.items()))
        if key not in self._cache:
            self._cache[key] = evaluation.protect_clips(self.stack.test_clips, self.train(**kw)[0], self.stack.bundle)
        return self._cache[key]


@pytest.fixture(scope="session")
def runs(toy_stack, target):
    return UapRuns(toy_stack, target)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[n])
