import math

import numpy as np
import pytest

from latentuap import preparation
from latentuap.audio_io import AudioClip
from latentuap.errors import NoViableCandidate
from stubs import ScriptedBundle, identity_bundle


def test_scale_search_stops_at_first_failure():
    # peak 0.8: transcribes at w = 1 (0.8) and 0.5 (0.4), fails at 0.25 (0.2)
    b = ScriptedBundle("open the door", threshold=0.3, amplitudes=[0.8])
    spec = preparation.search_target_audio("open the door", b, n=1, s=0.5, seeds=[0])
    assert spec.scale == 0.25
    assert spec.w_last_ok == 0.5
    assert spec.search_loss == b.asr_loss(b.decode(spec.target_latent), "open the door")


def test_scale_search_last_ok_rule():
    b = ScriptedBundle("t", threshold=0.3, amplitudes=[0.8])
    spec = preparation.search_target_audio("t", b, n=1, s=0.5, seeds=[0], scale_rule="last-ok")
    assert spec.scale == 0.5


def test_loop_never_entered_returns_unscaled():
    b = ScriptedBundle("t", threshold=0.95, amplitudes=[0.8])
    spec = preparation.search_target_audio("t", b, n=1, s=0.5, seeds=[0])
    assert spec.scale == 1.0
    assert spec.w_last_ok is None
    assert spec.search_loss == b.asr_loss(b.decode(b.encode(b.tts_sample("t", 0))), "t")


def test_strict_mode_raises_with_diagnostics():
    b = ScriptedBundle("t", threshold=0.95, amplitudes=[0.8, 0.7])
    with pytest.raises(NoViableCandidate) as info:
        preparation.search_target_audio("t", b, n=2, s=0.5, seeds=[0, 1], strict=True)
    assert len(info.value.diagnostics) == 2


def test_argmin_over_candidates_and_power_of_s():
    amps = [0.8, 0.95, 0.6, 0.9]
    b = ScriptedBundle("t", threshold=0.3, amplitudes=amps)
    s = 0.9
    spec = preparation.search_target_audio("t", b, n=4, s=s, seeds=range(4))
    losses = [c["loss"] for c in spec.candidates]
    assert spec.search_loss == min(losses)
    for c in spec.candidates:
        k = round(math.log(c["scale"]) / math.log(s))
        assert abs(c["scale"] - s**k) <= 1e-9
    assert 0 < spec.scale <= 1
    # post-hoc recomputation is exact
    assert spec.search_loss == b.asr_loss(b.decode(spec.target_latent), "t")


def test_search_is_deterministic():
    b = ScriptedBundle("t", threshold=0.3, amplitudes=[0.8, 0.9, 0.7])
    a1 = preparation.search_target_audio("t", b, n=3, s=0.8, seeds=range(3))
    a2 = preparation.search_target_audio("t", b, n=3, s=0.8, seeds=range(3))
    np.testing.assert_array_equal(a1.target_latent.values, a2.target_latent.values)
    assert a1.candidates == a2.candidates


@pytest.mark.parametrize("n,s", [(0, 0.5), (1, 1.0), (1, 0.0)])
def test_search_rejects_bad_arguments(n, s):
    with pytest.raises(ValueError):
        preparation.search_target_audio("t", ScriptedBundle("t", 0.3), n=n, s=s)


def test_target_save_load(tmp_path):
    b = ScriptedBundle("t", threshold=0.3, amplitudes=[0.8])
    spec = preparation.search_target_audio("t", b, n=1, s=0.5, seeds=[0])
    back = preparation.load_target(preparation.save_target(spec, tmp_path / "t.npz"))
    np.testing.assert_array_equal(back.target_latent.values, spec.target_latent.values)
    assert (back.scale, back.search_loss, back.w_last_ok, back.candidates) == (spec.scale, spec.search_loss, spec.w_last_ok, spec.candidates)
    assert "scale" in preparation.target_report(spec)


def test_screening_identity_is_perfect():
    b = identity_bundle()
    rng = np.random.default_rng(0)
    clips = [AudioClip(rng.uniform(-0.5, 0.5, 4000), 16000) for _ in range(5)]
    rep = preparation.screen_autoencoder(b, clips)
    assert rep.quality_proxy == pytest.approx(0.0, abs=1e-5)
    assert rep.inference_ms > 0
    assert rep.param_count == b.param_count() == 0
    with pytest.raises(ValueError):
        preparation.screen_autoencoder(b, clips[:4])
