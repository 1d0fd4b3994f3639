import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from svbp.planning.metrics import evaluate_run
from svbp.planning.mpc import SvbpPlanner, run_episode
from svbp.planning.scenario import HarnessSettings, canonical
from svbp.swarm import (BeliefSnapshot, DecodeError, Mailbox, Network, SwarmPlanner, VersionError,
                        decode, encode, read_frame)


def _snap(rng, n=7, d=4, robot=3, it=11):
    w = rng.random(n)
    return BeliefSnapshot(robot, it, rng.normal(size=(n, d)), w / w.sum())


def test_round_trip_is_bit_exact(rng):
    s = _snap(rng)
    back = decode(encode(s))
    assert back == s
    assert back.particles.tobytes() == s.particles.tobytes()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, allow_infinity=False)),
       st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1))
def test_round_trip_property(x, robot, it):
    s = BeliefSnapshot(robot, it, x, np.linspace(0, 1, len(x)))
    assert decode(encode(s)) == s


def test_frame_layout_is_little_endian():
    s = BeliefSnapshot(1, 2, np.array([[1.5]]), np.array([1.0]))
    f = encode(s)
    assert f[4:8] == b"SVBP"
    assert struct.unpack_from("<H", f, 8)[0] == 1
    assert struct.unpack_from("<d", f, len(f) - 16)[0] == 1.5


def test_truncated_frame_raises(rng):
    f = encode(_snap(rng))
    for cut in (2, 10, len(f) - 1):
        with pytest.raises(DecodeError) as err:
            decode(f[:cut])
        assert "offset" in str(err.value)


def test_version_mismatch_is_explicit(rng):
    f = bytearray(encode(_snap(rng)))
    f[8:10] = struct.pack("<H", 9)
    with pytest.raises(VersionError, match="version 9"):
        decode(bytes(f))


def test_bad_magic_names_offset(rng):
    f = bytearray(encode(_snap(rng)))
    f[4:8] = b"XXXX"
    with pytest.raises(DecodeError) as err:
        decode(bytes(f))
    assert err.value.offset == 4


def test_non_finite_snapshot_rejected():
    with pytest.raises(ValueError):
        encode(BeliefSnapshot(0, 0, np.array([[np.nan]]), np.array([1.0])))


def test_stream_reader_splits_frames(rng):
    a, b = encode(_snap(rng, it=1)), encode(_snap(rng, it=2))
    data = bytearray(a + b)

    def recv(n):
        out = bytes(data[:min(n, 5)])  # small reads exercise reassembly
        del data[:len(out)]
        return out
    assert decode(read_frame(recv)).iteration == 1
    assert decode(read_frame(recv)).iteration == 2
    assert read_frame(recv) is None


def test_mailbox_keeps_stamps_monotone(rng):
    box = Mailbox()
    box.offer(_snap(rng, it=5))
    box.offer(_snap(rng, it=3))
    assert box.latest[3][0].iteration == 5
    assert box.out_of_order == 1


def test_network_latency_and_drops():
    net = Network(2, HarnessSettings(latency=2), np.random.default_rng(0))
    net.post(1, 0, encode(BeliefSnapshot(1, 1, np.zeros((1, 1)), np.ones(1))))
    assert net.deliver(3, 0) == []
    assert len(net.deliver(4, 0)) == 1
    lossy = Network(2, HarnessSettings(drop_probability=0.5), np.random.default_rng(1))
    for _ in range(400):
        lossy.post(0, 1, b"")
    assert 150 < lossy.dropped < 250
    with pytest.raises(ValueError):
        Network(2, HarnessSettings(drop_probability=1.0), np.random.default_rng(0))


def test_single_robot_matches_centralized():
    sc = canonical("single")
    c = run_episode(sc, SvbpPlanner(sc, np.random.default_rng(4)), max_steps=15)
    sp = SwarmPlanner(sc, np.random.default_rng(4))
    d = run_episode(sc, sp, max_steps=15)
    assert np.array_equal(c.states(), d.states())
    assert sp.stats()["sent"] == 0


@pytest.mark.parametrize("transport", ["in_process", "loopback_sockets"])
def test_zero_latency_matches_centralized(transport):
    sc = canonical("swap3")
    c = run_episode(sc, SvbpPlanner(sc, np.random.default_rng(0)), max_steps=12)
    sp = SwarmPlanner(sc, np.random.default_rng(0), settings=HarnessSettings(transport=transport))
    d = run_episode(sc, sp, max_steps=12)
    sp.close()
    assert np.max(np.abs(c.states() - d.states())) <= 1e-9


def test_drops_keep_every_robot_moving():
    sc = canonical("swap3")
    sp = SwarmPlanner(sc, np.random.default_rng(1), np.random.default_rng(2),
                      HarnessSettings(drop_probability=0.3))
    run = run_episode(sc, sp, max_steps=20, stop_when_settled=False)
    assert len(run.records) == 20
    st_ = sp.stats()
    assert st_["dropped"] > 0 and st_["out_of_order"] == 0
    moved = np.linalg.norm(run.states()[-1, :, :2] - run.states()[0, :, :2], axis=1)
    assert np.all(moved > 0.1)


def test_latency_is_deterministic():
    sc = canonical("swap2")
    runs = []
    for _ in range(2):
        sp = SwarmPlanner(sc, np.random.default_rng(0), np.random.default_rng(1),
                          HarnessSettings(latency=2, drop_probability=0.2))
        runs.append(run_episode(sc, sp, max_steps=8).states())
    assert np.array_equal(runs[0], runs[1])


def test_decentralized_swap_reaches_goals():
    sc = canonical("swap3")
    m = evaluate_run(run_episode(sc, SwarmPlanner(sc, np.random.default_rng(0))))
    assert m.pass_rate([0.3])[0] == 1.0
