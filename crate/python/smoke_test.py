"""Smoke test for the hasr Python bindings.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import json
import math
import os
import tempfile

import hasr

WORDS = ["yes", "no", "up"]


def check_audio(tmp):
    pcm = hasr.synth_pcm("yes", 0, 17)
    assert len(pcm) == hasr.SAMPLE_RATE
    path = os.path.join(tmp, "yes.wav")
    hasr.write_wav(path, pcm)
    assert hasr.read_wav(path) == pcm
    assert hasr.pcm_digest(pcm) == hasr.pcm_digest(list(pcm))

    frames = hasr.mfcc(pcm)
    assert frames and all(len(f) == len(frames[0]) for f in frames)
    for c in range(len(frames[0])):
        assert abs(sum(f[c] for f in frames) / len(frames)) < 1e-9

    segs = hasr.segment(pcm)
    assert len(segs) == 1, segs
    start, end, _ = segs[0]
    assert 0 <= start < end <= len(pcm)


def check_hmm():
    hmm = hasr.Hmm.left_right(4, 6)
    assert hmm.n_states == 4 and hmm.n_symbols == 6
    assert math.isclose(sum(hmm.pi), 1.0)
    obs = hmm.sample(30, 3)
    path, score = hmm.viterbi(obs)
    assert len(path) == len(obs)
    assert score <= hmm.log_likelihood(obs) + 1e-9

    seqs = [hmm.sample(40, s) for s in range(8)]
    trained, history = hmm.baum_welch(seqs, max_iters=20)
    assert all(b >= a - 1e-9 for a, b in zip(history, history[1:]))
    assert trained.n_states == 4

    try:
        hasr.Hmm([0.5, 0.4], [[1.0, 0.0], [0.0, 1.0]], [[1.0], [1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-stochastic pi accepted")


def check_protocol():
    vectors = hasr.golden_vectors()
    assert vectors["proto_version"] == hasr.PROTO_VERSION
    for frame in vectors["frames"]:
        raw = bytes.fromhex(frame["hex"])
        decoded = hasr.decode(raw)
        if "message" not in frame:
            continue
        assert decoded is not None, frame["name"]
        msg, used = decoded
        assert used == len(raw)
        assert msg == frame["message"], frame["name"]
        assert hasr.encode(msg) == raw, frame["name"]

    ping = hasr.encode({"type": "Ping"})
    assert hasr.decode(ping[:-1]) is None
    try:
        hasr.decode(b"\x00\x00\x00\x01\xee")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown message type accepted")


def check_models(tmp):
    data = os.path.join(tmp, "data")
    for word in WORDS:
        os.makedirs(os.path.join(data, word))
        for i in range(12):
            hasr.write_wav(
                os.path.join(data, word, f"{word}_{i:04}.wav"),
                hasr.synth_pcm(word, i, 5),
            )
    models = hasr.WordModels.train(data, WORDS, n_states=4, codebook_k=16, seed=3)
    assert sorted(models.words) == sorted(WORDS)
    assert models.hmm("yes").n_symbols == 16

    path = os.path.join(tmp, "model.json")
    models.save(path)
    again = hasr.WordModels.load(path)
    assert again.to_json() == models.to_json()
    assert json.loads(models.to_json())["format_version"] == 1

    out = models.recognize(hasr.synth_pcm("no", 900, 5))
    assert set(out["scores"]) == set(WORDS)
    assert out["best_word"] in WORDS
    assert models.recognize(hasr.synth_pcm("no", 900, 5), threshold=1e9)["best_word"] is None


def main():
    with tempfile.TemporaryDirectory() as tmp:
        check_audio(tmp)
        check_hmm()
        check_protocol()
        check_models(tmp)
    print("smoke test ok")


if __name__ == "__main__":
    main()
