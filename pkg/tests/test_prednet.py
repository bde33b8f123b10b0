# /tests/test_prednet.py

import dataclasses
import math

import numpy as np
import pytest

from core import autodiff as ad
from core.errors import InputError, ShapeError
from core.prednet import (LatentState, NetConfig, NetOutput, NetTargets, TrainingSample, build_forward, decode, encode,
                          focal_terms, forward, init_weights, loss, loss_graph, make_targets, outputs_from_graph,
                          prepare_sample, rnn_step)
from core.raster import GridSpec, build_net_input


def tiny_input(scene, lane_map, config, start=0):
    history = scene.frames[start:start + config.history_len]
    ego = history[-1].get(0)
    return build_net_input(history, lane_map, ego, config.grid, 0.0, np.random.default_rng(0), config.history_len)


def tiny_sample(scene, lane_map, config, start=0):
    t = config.history_len
    return TrainingSample(scene.frames[start:start + t], scene.frames[start + t:start + t + config.horizon],
                          lane_map, 0, f"s{start}")


def test_presets_and_latent_geometry(tiny_config):
    assert tiny_config.latent_shape == (8, 4, 4)
    assert tiny_config.upsample_factor == 4
    desk = NetConfig.preset("desk")
    assert desk.latent_shape == (32, 16, 16)
    assert desk.grid == GridSpec(128, 0.5)
    with pytest.raises(InputError):
        NetConfig.preset("huge")


def test_forward_shapes_and_ranges(tiny_config, tiny_weights, highway_scene, lane_map):
    net_input = tiny_input(highway_scene, lane_map, tiny_config)
    out, latent = forward(net_input, tiny_weights)
    assert out.occupancy.shape == (4, 32, 32)
    assert out.velocity.shape == (4, 2, 32, 32)
    assert out.backtrace.shape == (4, 2, 32, 32)
    assert np.all((out.occupancy > 0) & (out.occupancy < 1))
    assert latent.h.shape == (8, 4, 4)
    assert out.past_occupancy is None
    assert out.fields(2).shape == (5, 32, 32)
    np.testing.assert_array_equal(out.fields(1)[0], out.occupancy[0])


def test_forward_is_deterministic(tiny_config, tiny_weights, highway_scene, lane_map):
    net_input = tiny_input(highway_scene, lane_map, tiny_config)
    a, _ = forward(net_input, tiny_weights)
    b, _ = forward(net_input, tiny_weights)
    np.testing.assert_array_equal(a.occupancy, b.occupancy)
    np.testing.assert_array_equal(a.velocity, b.velocity)


def test_batched_forward_matches_single(tiny_config, tiny_weights, highway_scene, lane_map):
    inputs = [tiny_input(highway_scene, lane_map, tiny_config, s) for s in (0, 3)]
    outs, latent = forward(inputs, tiny_weights)
    assert latent.h.shape == (2, 8, 4, 4)
    single, _ = forward(inputs[1], tiny_weights)
    np.testing.assert_allclose(outs[1].occupancy, single.occupancy, atol=1e-12)


def test_train_mode_emits_past_heads_and_custom_horizon(tiny_config, tiny_weights, highway_scene, lane_map):
    out, _ = forward(tiny_input(highway_scene, lane_map, tiny_config), tiny_weights, mode="train", horizon=7)
    assert out.horizon == 7
    assert out.past_occupancy.shape == (3, 32, 32)
    assert out.past_backtrace.shape == (3, 2, 32, 32)


def test_initial_occupancy_prior(tiny_weights):
    assert tiny_weights.params["dec.up.b"][0] == pytest.approx(-math.log(99.0))


def test_forward_rejects_foreign_config(tiny_config, tiny_weights, highway_scene, lane_map):
    other = dataclasses.replace(tiny_config, horizon=5)
    with pytest.raises(InputError):
        forward(tiny_input(highway_scene, lane_map, tiny_config), tiny_weights, config=other)


def test_build_forward_rejects_wrong_grid(tiny_weights):
    with pytest.raises(ShapeError):
        build_forward(tiny_weights, np.zeros((1, 3, 3, 16, 16)), np.zeros((1, 2, 16, 16)))


def test_step_functions_compose(tiny_config, tiny_weights, highway_scene, lane_map):
    net_input = tiny_input(highway_scene, lane_map, tiny_config)
    feat = encode(net_input.dynamic[0], net_input.static[0], tiny_weights)
    assert feat.shape == (8, 4, 4)
    h = rnn_step(LatentState(np.zeros_like(feat)), feat, tiny_weights)
    assert h.h.shape == feat.shape and np.all(h.h >= 0)
    assert decode(h, tiny_weights).shape == (5, 32, 32)
    with pytest.raises(ShapeError):
        rnn_step(LatentState(np.zeros((8, 2, 2))), feat, tiny_weights)


def _gated(weights, z_bias):
    """ 업데이트 게이트를 상수로 고정하고 ASPP를 끈 가중치. """
    w = weights.copy()
    for name in w.params:
        if name.startswith("past.aspp."):
            w.params[name][...] = 0.0
    w.params["past.gru.z.w"][...] = 0.0
    w.params["past.gru.z.b"][...] = z_bias
    return w


def test_update_gate_closed_keeps_state(tiny_weights):
    rng = np.random.default_rng(1)
    h = np.abs(rng.normal(size=(8, 4, 4)))
    out = rnn_step(LatentState(h), rng.normal(size=(8, 4, 4)), _gated(tiny_weights, -60.0))
    np.testing.assert_allclose(out.h, h, atol=1e-12)


def test_update_gate_open_takes_candidate(tiny_weights):
    rng = np.random.default_rng(2)
    h = np.abs(rng.normal(size=(8, 4, 4)))
    feat = rng.normal(size=(8, 4, 4))
    a = rnn_step(LatentState(h), feat, _gated(tiny_weights, 60.0))
    b = rnn_step(LatentState(2 * h), feat, _gated(tiny_weights, 60.0))
    assert np.all(a.h <= 1.0)
    # 후보값은 리셋 게이트를 거친 h에만 의존하므로 h를 바꾸면 결과도 바뀝니다
    assert not np.allclose(a.h, b.h)


def test_make_targets_alignment(tiny_config, highway_scene):
    frames = highway_scene.frames
    ego = frames[2].get(0)
    targets = make_targets(frames[:3], frames[3:7], ego, tiny_config)
    assert targets.occupancy.shape == (4, 32, 32)
    assert targets.past_occupancy.shape == (3, 32, 32)
    # 마지막 과거 디코더의 목표는 첫 미래 프레임
    np.testing.assert_array_equal(targets.past_occupancy[-1], targets.occupancy[0])
    # 속도 목표는 프레임 간 변위 / Δt 이며 차량 속도 중 하나와 일치
    speeds = targets.velocity[0, 0][targets.occupancy[0] > 0]
    assert speeds.size > 0
    assert np.all(np.min(np.abs(speeds[:, None] - np.array([9.0, 10.0, 11.0])), axis=1) < 1e-9)
    np.testing.assert_allclose(targets.velocity[0, 1][targets.occupancy[0] > 0], 0.0, atol=1e-9)
    with pytest.raises(InputError):
        make_targets(frames[:2], frames[3:7], ego, tiny_config)


def test_focal_reference_value():
    assert focal_terms(1.0, 0.5, 2.0, 0.25) == pytest.approx(0.25 * 0.25 * math.log(2.0), rel=1e-6)
    assert focal_terms(1.0, 0.5, 2.0, 0.25) == pytest.approx(0.043322, abs=1e-6)
    assert focal_terms(0.0, 0.5, 2.0, 0.25) == pytest.approx(0.75 * 0.25 * math.log(2.0), rel=1e-6)


def _one_pixel(occ, vel, back):
    return (np.full((1, 1, 1), occ), np.full((1, 2, 1, 1), vel), np.full((1, 2, 1, 1), back))


def test_loss_terms(tiny_config):
    out = NetOutput(*_one_pixel(0.5, 1.0, 0.0))
    tgt = NetTargets(*_one_pixel(1.0, 1.0, 0.0))
    total, parts = loss(out, tgt, tiny_config)
    assert parts["focal"] == pytest.approx(0.05 * 0.043322, abs=1e-7)
    assert parts["velocity"] == 0.0 and parts["backtrace"] == 0.0
    assert total == pytest.approx(parts["focal"])

    off = NetOutput(*_one_pixel(0.5, 3.0, 2.0))
    _, parts = loss(off, tgt, tiny_config)
    assert parts["velocity"] == pytest.approx(8.0)
    assert parts["backtrace"] == pytest.approx(8.0)

    focal_only = dataclasses.replace(tiny_config, lambda_v=0.0, lambda_w=0.0)
    total, _ = loss(off, tgt, focal_only)
    assert total == pytest.approx(0.05 * 0.043322, abs=1e-7)


def test_loss_clamps_saturated_probabilities(tiny_config):
    out = NetOutput(*_one_pixel(0.0, 0.0, 0.0))
    tgt = NetTargets(*_one_pixel(1.0, 0.0, 0.0))
    total, _ = loss(out, tgt, tiny_config)
    assert math.isfinite(total)


def test_loss_graph_agrees_with_numpy_loss(tiny_config, tiny_weights, highway_scene, lane_map):
    net_input, targets = prepare_sample(tiny_sample(highway_scene, lane_map, tiny_config), tiny_config,
                                        np.random.default_rng(0), map_dropout_prob=0.0)
    fg = build_forward(tiny_weights, net_input.dynamic[None], net_input.static[None], mode="train")
    total, breakdown = loss_graph(fg, [targets], tiny_config)
    expected, parts = loss(outputs_from_graph(fg)[0], targets, tiny_config)
    assert float(total.data) == pytest.approx(expected, rel=1e-8)
    assert float(breakdown["velocity"].data) == pytest.approx(parts["velocity"], rel=1e-8)
    assert set(breakdown) == set(parts)
    assert breakdown["total"] is total


def test_network_gradients_match_finite_differences(tiny_config, tiny_weights, highway_scene, lane_map):
    net_input, targets = prepare_sample(tiny_sample(highway_scene, lane_map, tiny_config), tiny_config,
                                        np.random.default_rng(0), map_dropout_prob=0.0)
    weights = init_weights(tiny_config, np.random.default_rng(3), dtype=np.float64)
    fg = build_forward(weights, net_input.dynamic[None], net_input.static[None], mode="train")
    total, _ = loss_graph(fg, [targets], tiny_config)
    err = ad.gradient_check(fg.graph, total, max_entries=2, rng=np.random.default_rng(0))
    assert err <= ad.TOLERANCE[np.dtype(np.float64)]
