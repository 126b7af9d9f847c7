import json

import numpy as np
import pytest

import eegtask


def test_montage():
    labels = eegtask.montage_labels()
    assert len(labels) == 20
    assert set(eegtask.coherence_electrodes()) <= set(labels)


def test_identical_signal_coherence():
    x = np.random.default_rng(0).standard_normal(512)
    freqs, coh = eegtask.coherence(x, x)
    assert len(freqs) == 129
    assert freqs[1] == pytest.approx(1.0)
    assert np.allclose(np.asarray(coh)[1:], 1.0, atol=1e-9)


def test_planted_feature_is_maximal():
    recs = eegtask.synth_generate(n_subjects=1, epochs_per_class=2, seed=3)
    rec = recs[0]
    samples = np.asarray(rec.samples)
    assert samples.shape == (20, 3 * 2 * 512)
    event = next(e for e in rec.events if e.difficulty == eegtask.Difficulty.NONE)
    epoch = samples[:, event.onset_sample:event.onset_sample + 512]
    values, names = eegtask.extract_features(epoch, rec.channel_labels)
    assert len(values) == len(names) == 78 * 6
    assert names[int(np.argmax(values))] == "O2-Pz:low_alpha"
    assert max(values) > 0.9


def test_recording_round_trip(tmp_path):
    rec = eegtask.Recording()
    rec.subject_id = "S01"
    rec.channel_labels = ["O1", "O2"]
    rec.samples = np.arange(20, dtype=np.float32).reshape(2, 10)
    rec.events = [eegtask.Event(0, 10, eegtask.Difficulty.STATIC)]
    back = eegtask.load_recording(eegtask.save_recording(rec, tmp_path))
    assert back.channel_labels == ["O1", "O2"]
    assert np.array_equal(np.asarray(back.samples), np.asarray(rec.samples))
    assert back.events[0].difficulty == eegtask.Difficulty.STATIC


def test_svm_and_rfe():
    rng = np.random.default_rng(1)
    y = np.arange(150) % 3
    x = rng.standard_normal((150, 12))
    for c, col in enumerate((2, 5, 9)):
        x[y == c, col] += 4.0
    selected, ranked = eegtask.rfe_stable(x, y.tolist(), target_k=3, n_repeats=3, seed=4)
    assert sorted(selected) == [2, 5, 9]
    assert all(count <= 3 for _, count in ranked)
    svm = eegtask.train_svm(x[:, [2, 5, 9]], y.tolist(), kernel="linear")
    acc = np.mean(np.asarray(svm.predict(x[:, [2, 5, 9]])) == y)
    assert acc > 0.9
    restored = eegtask.MulticlassSvm.from_json(svm.to_json())
    assert restored.predict(x[:5, [2, 5, 9]]) == svm.predict(x[:5, [2, 5, 9]])
    assert json.loads(svm.to_json())


def test_network_shape_and_softmax():
    shape = eegtask.NetworkShape.standard()
    assert shape.parameter_count() == 81423
    assert shape.shape_chain()[-1] == [3]
    net = eegtask.Network(shape)
    net.initialize(seed=5)
    p = net.forward(np.random.default_rng(2).standard_normal((20, 512)).astype(np.float32))
    assert len(p) == 3
    assert sum(p) == pytest.approx(1.0, abs=1e-6)


def test_errors_map_to_eeg_error():
    with pytest.raises(eegtask.EegError):
        eegtask.butterworth_bandpass(low_hz=30.0, high_hz=20.0)
    with pytest.raises(eegtask.EegError):
        eegtask.train_svm(np.zeros((4, 2)), [1, 1, 1, 1])
