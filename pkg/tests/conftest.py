import numpy as np
import pytest
import torch

from astropretext import catalog, netspec, synthgen


@pytest.fixture(scope="session", autouse=True)
def single_threaded_torch():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 32px star/galaxy dataset small enough for fast training tests."""
    out = tmp_path_factory.mktemp("smallds")
    cfg = synthgen.GeneratorConfig(image_size=32)
    ds = synthgen.generate_dataset({"star": 60, "galaxy": 60}, out, seed=5, config=cfg)
    data = catalog.load_dataset(ds.catalog_path, ds.image_dir)
    split = catalog.make_split(list(data.ids), seed=0)
    return ds, data, split


@pytest.fixture(scope="session")
def tiny_backbone32():
    return netspec.BackboneSpec("tiny", 32, (8, 16))


@pytest.fixture(scope="session")
def small_head():
    return netspec.HeadSpec(output_units=2, output_activation="softmax", hidden_units=64)


def make_entry(eid="obj-1", unc=0.02, mags=None, label=None, ra=10.0, dec=-20.0):
    values = tuple(mags) if mags is not None else tuple(np.linspace(16.0, 19.0, 12))
    uncertainties = (unc,) * 12 if np.isscalar(unc) else tuple(unc)
    return catalog.CatalogEntry(
        id=eid,
        ra=ra,
        dec=dec,
        magnitudes=catalog.MagnitudeVector(values, uncertainties),
        label=label,
    )
