"""Tests for dataset loading, synthesis and evaluation pairing."""

import logging

import numpy as np
import pytest
import torch
from PIL import Image

from a3gn.data import (
    IdentityDataset,
    TargetSet,
    load_images,
    make_eval_pairs,
    make_target_set,
    quantize,
    save_images,
    split_holdout,
    synth_faces,
)
from a3gn.errors import ConfigurationError


def _write_tree(root, identities=2, per_identity=3, size=128, mode="RGB"):
    rng = np.random.default_rng(0)
    for i in range(identities):
        folder = root / f"person_{i}"
        folder.mkdir(parents=True)
        for j in range(per_identity):
            shape = (size, size, 3) if mode == "RGB" else (size, size)
            pixels = rng.integers(0, 256, shape, dtype=np.uint8)
            Image.fromarray(pixels, mode=mode).save(folder / f"img_{j}.png")
    return root


def test_synth_faces_counts_and_labels():
    """Test 10 identities x 50 images with labels 0..9."""
    data = synth_faces(seed=1, n_identities=10, per_identity=50, image_size=32)

    assert data.images.shape == (500, 3, 32, 32)
    assert sorted(set(data.labels.tolist())) == list(range(10))
    assert data.images.min() >= -1.0 and data.images.max() <= 1.0


def test_synth_faces_is_deterministic():
    """Test the same seed gives bit-identical datasets."""
    a = synth_faces(seed=5, n_identities=3, per_identity=4, image_size=16)
    b = synth_faces(seed=5, n_identities=3, per_identity=4, image_size=16)
    c = synth_faces(seed=6, n_identities=3, per_identity=4, image_size=16)

    assert torch.equal(a.images, b.images)
    assert not torch.equal(a.images, c.images)


def test_synth_identities_are_well_separated():
    """Test minimum identity distance exceeds three times the jitter scale."""
    data = synth_faces(seed=2, n_identities=10, per_identity=1, image_size=16)
    distances = torch.cdist(data.identity_params, data.identity_params)
    off_diagonal = distances[~torch.eye(10, dtype=torch.bool)]

    assert off_diagonal.min() > 3 * data.jitter_scale


def test_synth_faces_needs_two_identities():
    """Test a single identity is refused."""
    with pytest.raises(ConfigurationError):
        synth_faces(seed=0, n_identities=1, per_identity=5, image_size=16)


def test_load_images_crops_and_resizes(tmp_path):
    """Test 2 identities x 3 images at 128x128 load as 6 items of 3x112x112."""
    data = load_images(_write_tree(tmp_path / "faces"), 112)

    assert data.images.shape == (6, 3, 112, 112)
    assert data.identities == ["person_0", "person_1"]
    assert data.labels.tolist() == [0, 0, 0, 1, 1, 1]
    assert data.images.min() >= -1.0 and data.images.max() <= 1.0


def test_load_images_center_crops_non_square(tmp_path):
    """Test a landscape image keeps its central square."""
    folder = tmp_path / "faces" / "a"
    folder.mkdir(parents=True)
    pixels = np.zeros((16, 48, 3), dtype=np.uint8)
    pixels[:, 16:32] = 255
    Image.fromarray(pixels).save(folder / "wide.png")

    data = load_images(tmp_path / "faces", 16)

    assert torch.all(data.images == 1.0)


def test_load_images_replicates_grayscale(tmp_path):
    """Test single-channel input becomes three identical channels."""
    data = load_images(_write_tree(tmp_path / "gray", 1, 2, 32, mode="L"), 32)

    assert data.images.shape[1] == 3
    assert torch.equal(data.images[:, 0], data.images[:, 1])
    assert torch.equal(data.images[:, 1], data.images[:, 2])


def test_load_images_order_is_stable(tmp_path):
    """Test loading the same directory twice gives the same items in the same order."""
    root = _write_tree(tmp_path / "faces", 3, 3, 24)
    a, b = load_images(root, 24), load_images(root, 24)

    assert a.paths == b.paths
    assert a.paths == sorted(a.paths)
    assert torch.equal(a.images, b.images)


def test_load_images_skips_a_few_unreadable_files(tmp_path, caplog):
    """Test one broken file in twenty is skipped with a warning."""
    root = _write_tree(tmp_path / "faces", 2, 10, 16)
    (root / "person_0" / "img_0.png").write_bytes(b"not a png")

    with caplog.at_level(logging.WARNING, logger="a3gn.data"):
        data = load_images(root, 16)

    assert len(data) == 19
    assert any("unreadable" in r.message for r in caplog.records)


def test_load_images_fails_when_too_many_unreadable(tmp_path):
    """Test more than 10% broken files is a configuration error."""
    root = _write_tree(tmp_path / "faces", 1, 5, 16)
    for j in range(2):
        (root / "person_0" / f"img_{j}.png").write_bytes(b"garbage")

    with pytest.raises(ConfigurationError):
        load_images(root, 16)


def test_load_images_empty_directory(tmp_path):
    """Test an empty tree is a configuration error."""
    (tmp_path / "empty").mkdir()
    with pytest.raises(ConfigurationError):
        load_images(tmp_path / "empty", 16)


def test_save_and_reload_within_one_quantization_step(tmp_path):
    """Test the PNG round trip deviates by at most one 8-bit step."""
    data = synth_faces(seed=3, n_identities=2, per_identity=3, image_size=16)
    paths = [tmp_path / data.name_of(i) / f"{i}.png" for i in range(len(data))]
    save_images(data.images, paths)

    reloaded = load_images(tmp_path, 16)

    assert (reloaded.images - data.images).abs().max() <= 1 / 127.5
    assert torch.allclose(reloaded.images, quantize(data.images), atol=1e-12)


def test_make_target_set_takes_first_images(faces: IdentityDataset):
    """Test the target set holds the first seven images of one identity."""
    target = make_target_set(faces, identity=1, count=7)

    assert target.count == 7
    assert target.name == faces.identities[1]
    assert torch.equal(target.images, faces.images[faces.indices_of(1)[:7]])


def test_split_holdout_excludes_named_identities(faces: IdentityDataset):
    """Test per-identity holdout sizes and exclusion."""
    train, probes = split_holdout(faces, per_identity=3, exclude=[faces.identities[0]])

    assert len(probes) == 6 and len(train) == 10
    assert faces.identities[0] not in {probes.name_of(i) for i in range(len(probes))}


def _probe_set(n_identities=5, per_identity=20):
    return synth_faces(seed=4, n_identities=n_identities, per_identity=per_identity, image_size=16)


def test_make_eval_pairs_pairs_every_probe():
    """Test 100 probes give 100 pairs against the canonical target image."""
    probes = _probe_set()
    target = TargetSet(identity=0, name="someone-else", images=torch.zeros(7, 3, 16, 16))

    pairs = make_eval_pairs(probes, target)

    assert len(pairs) == 100
    assert [p.probe_index for p in pairs] == list(range(100))
    assert all(torch.equal(p.target_image, target.images[0]) for p in pairs)
    assert all(torch.equal(p.encode_images, target.images) for p in pairs)


def test_make_eval_pairs_excludes_target_identity():
    """Test probes of the target identity are dropped only when asked."""
    probes = _probe_set()
    target = make_target_set(probes, identity=2, count=7)

    assert len(make_eval_pairs(probes, target, exclude_target=True)) == 80
    assert len(make_eval_pairs(probes, target, exclude_target=False)) == 100


def test_make_eval_pairs_a_prime_compares_another_image():
    """Test A->A' compares against the next image and leaves it out of the encoded set."""
    probes = _probe_set(2, 3)
    images = torch.stack([torch.full((3, 16, 16), v / 10) for v in range(7)])
    target = TargetSet(identity=9, name="target", images=images)

    pair = make_eval_pairs(probes, target, "A->A'")[0]

    assert torch.equal(pair.encode_images, images[[0, 2, 3, 4, 5, 6]])
    assert torch.equal(pair.target_image, images[1])
    assert pair.protocol == "A->A'"


def test_make_eval_pairs_empty_probe_set():
    """Test no remaining probes is a configuration error."""
    probes = _probe_set(2, 3)
    target = make_target_set(probes, identity=0, count=3)
    only_target = probes.subset(probes.indices_of(0))

    with pytest.raises(ConfigurationError):
        make_eval_pairs(only_target, target, exclude_target=True)
