"""Small 2-D fixtures that show what each regulariser preserves.

``cycle``: a 4-cycle over almost collinear points. A conformal map can bend
the plane to close the cycle while keeping cells square; a map kept close to
the identity distorts cell areas more unevenly.

``tree``: a two-level tree whose children sit on the far side of the root.
The tree hinge loss measures how well each target space separates graph
neighbours from non-neighbours.

The ``figure-data`` CLI subcommand writes the same runs to CSV for plotting.
"""

# %% cycle: area distortion of the background lattice
import warnings

from conformal_retrofit import fixtures

warnings.simplefilter("ignore", RuntimeWarning)
for variant in ("conformal", "explicit"):
    run = fixtures.run_fixture("cycle", variant, "E2", seed=0, epochs=300)
    print(f"cycle {variant:>9}: area distortion {fixtures.area_distortion(run.fixture.grid, run.mapped_grid):.3f}")

# %% tree: hinge loss of the graph edges in three target geometries
for target in ("E2", "H2", "S2"):
    run = fixtures.run_fixture("tree", "conformal", target, seed=0, epochs=300)
    print(f"tree into {target}: hinge {fixtures.graph_hinge(run.points, run.fixture.dataset, run.target):.4f}")
