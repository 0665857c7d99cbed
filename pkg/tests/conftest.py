import numpy as np
import pytest

from shockev import frontx, synth
from shockev.evcore import polar_encode


@pytest.fixture(scope="session")
def clean_sim():
    return synth.simulate_events(synth.default_scene(clutter=False), synth.default_cameras(), seed=1)


@pytest.fixture(scope="session")
def clutter_sim():
    return synth.simulate_events(synth.default_scene(clutter=True), synth.default_cameras(), seed=1)


def extract_all(sim):
    out = []
    for cam in sim.cameras:
        polar = polar_encode(cam.stream, cam.geometry.blast_point)
        out.append((polar, frontx.extract_view(polar, t_start=sim.scene.t0)))
    return out


@pytest.fixture(scope="session")
def clean_fronts(clean_sim):
    return extract_all(clean_sim)


@pytest.fixture(scope="session")
def clutter_fronts(clutter_sim):
    return extract_all(clutter_sim)


def silhouette_distance(geometry, track, t_rel, alpha):
    """True front distance (px) from the blast image point at ``t_rel`` us."""
    r = float(track.radius(t_rel))
    (x, y), _ = synth.silhouette_image_point(geometry, r, alpha)
    return float(np.hypot(x - geometry.blast_image[0], y - geometry.blast_image[1]))
