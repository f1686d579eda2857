import numpy as np
import pytest

from uncseg.errors import ConfigError
from uncseg.labelspace import builtin_schema
from uncseg.synthdata import (
    PhantomConfig,
    generate_dataset,
    generate_phantom,
    intensity_table,
    load_dataset,
    split_sizes,
    write_dataset,
)
from uncseg.voxvol import Dims


def test_cm_phantom_contents():
    image, labels = generate_phantom(PhantomConfig(seed=3))
    assert image.channels == 4 and image.dims == Dims(32, 32, 32)
    present = set(np.unique(labels.labels).tolist())
    assert present <= {0, 1, 2, 3} and {2, 3} <= present


def test_um_phantom_contents():
    um = builtin_schema("UM")
    image, labels = generate_phantom(PhantomConfig(schema=um, seed=4))
    assert image.channels == 1
    present = set(np.unique(labels.labels).tolist())
    assert 54 in present
    assert len(present & um.groups["cortical"]) > 20
    assert len(present & um.groups["subcortical"]) > 10


def test_same_seed_same_phantom():
    a = generate_phantom(PhantomConfig(seed=9))
    b = generate_phantom(PhantomConfig(seed=9))
    assert a[0] == b[0] and a[1] == b[1]
    c = generate_phantom(PhantomConfig(seed=10))
    assert not c[1] == a[1]


def test_zero_noise_intensities_follow_table():
    cfg = PhantomConfig(seed=1, noise_sigma=0.0)
    image, labels = generate_phantom(cfg)
    table = intensity_table(cfg)
    values = {tuple(v) for v in image.data.reshape(4, -1).T.tolist()}
    assert values <= {tuple(r) for r in table.tolist()}


def test_intensity_table_separates_tissues():
    table = intensity_table(PhantomConfig())
    diffs = np.abs(table[:, None, :] - table[None, :, :])
    off = ~np.eye(len(table), dtype=bool)
    assert diffs[off].min() >= 1.0


def test_tumor_stays_in_brain():
    for seed in range(5):
        _, labels = generate_phantom(PhantomConfig(seed=seed, tumor_count_range=(2, 2)))
        lab = labels.labels
        # outermost shell of the grid is air
        assert lab[0].max() == 0 and lab[-1].max() == 0


def test_config_errors():
    with pytest.raises(ConfigError):
        PhantomConfig(tumor_radius_range=(6.0, 12.0))
    with pytest.raises(ConfigError):
        PhantomConfig(schema=builtin_schema("UM"), tumor_structure="subregions")
    with pytest.raises(ConfigError):
        PhantomConfig(noise_sigma=-1)


def test_split_sizes():
    assert split_sizes(40, 0.2) == (32, 8)
    assert split_sizes(5, 0.5) == (2, 3)  # half rounds up
    with pytest.raises(ConfigError):
        split_sizes(1, 0.2)
    with pytest.raises(ConfigError):
        split_sizes(3, 0.1)


def test_dataset_roundtrip(tmp_path):
    cfg = PhantomConfig(dims=Dims(16, 16, 16), tumor_radius_range=(2.0, 3.0), seed=2)
    train, val = generate_dataset(cfg, 5, 0.4)
    assert [c.case_id for c in train] == [0, 1, 2] and [c.case_id for c in val] == [3, 4]
    write_dataset(tmp_path, cfg, train, val, 0.4)
    t2, v2, schema, manifest = load_dataset(tmp_path)
    assert schema == cfg.schema and manifest["val"] == [3, 4]
    assert all(a.image == b.image and a.labels == b.labels for a, b in zip(train + val, t2 + v2))
