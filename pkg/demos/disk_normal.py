"""A disk whose boundary ripples in the normal direction.

The reference is the unit disk; the perturbed boundary is
``r = 1 + eps cos(3 theta)``. The deformation moves points along the
normals of a thin collar inside the circle, so the same pull-back
machinery applies to a curved boundary. The printed table and slopes
mirror the graph demo.

Run with ``python3 demos/disk_normal.py`` (about 20 s).
"""

import sys
from pathlib import Path

from graph_rate import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(ROOT / "configs" / "disk_cosine_mode.yaml"))
