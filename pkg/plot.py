"""
Top-down raster of the true and estimated trajectories.
"""
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.
#
# Copyright (C) 2025 symlio contributors
#
import numpy as np
from PIL import Image, ImageDraw

IMAGE_SIZE = 800            # px, square canvas
MARGIN = 40                 # px
BACKGROUND = (255, 255, 255)
TRUTH_COLOUR = (120, 120, 120)
ESTIMATE_COLOUR = (200, 30, 30)
START_COLOUR = (30, 120, 200)
GRID_COLOUR = (230, 230, 230)
GRID_STEP: float = 1.0      # m


def _world_to_pixel(points: np.ndarray, lower: np.ndarray, scale: float) -> list[tuple[float, float]]:
    """x to the right, y up."""
    px = MARGIN + (points[:, 0] - lower[0]) * scale
    py = IMAGE_SIZE - MARGIN - (points[:, 1] - lower[1]) * scale
    return list(zip(px.tolist(), py.tolist()))


def draw_trajectories(truth_xy: np.ndarray, est_xy: np.ndarray) -> Image.Image:
    """Both trajectories on a shared, aspect-preserving scale with a 1 m grid."""
    # A polyline needs two vertices
    truth_xy = np.repeat(truth_xy, 2, axis=0) if len(truth_xy) == 1 else truth_xy
    est_xy = np.repeat(est_xy, 2, axis=0) if len(est_xy) == 1 else est_xy
    both = np.vstack((truth_xy, est_xy))
    lower = both.min(axis=0)
    extent = max(float(np.max(both.max(axis=0) - lower)), GRID_STEP)
    scale = (IMAGE_SIZE - 2 * MARGIN) / extent

    image = Image.new("RGB", (IMAGE_SIZE, IMAGE_SIZE), BACKGROUND)
    draw = ImageDraw.Draw(image)

    for x in np.arange(np.floor(lower[0]), lower[0] + extent + GRID_STEP, GRID_STEP):
        (px, _), = _world_to_pixel(np.array([[x, lower[1]]]), lower, scale)
        draw.line([(px, 0), (px, IMAGE_SIZE)], fill=GRID_COLOUR)
    for y in np.arange(np.floor(lower[1]), lower[1] + extent + GRID_STEP, GRID_STEP):
        (_, py), = _world_to_pixel(np.array([[lower[0], y]]), lower, scale)
        draw.line([(0, py), (IMAGE_SIZE, py)], fill=GRID_COLOUR)

    draw.line(_world_to_pixel(truth_xy, lower, scale), fill=TRUTH_COLOUR, width=3)
    draw.line(_world_to_pixel(est_xy, lower, scale), fill=ESTIMATE_COLOUR, width=2)

    (sx, sy), = _world_to_pixel(truth_xy[0:1], lower, scale)
    draw.ellipse([(sx - 5, sy - 5), (sx + 5, sy + 5)], outline=START_COLOUR, width=2)
    draw.text((MARGIN, 10), "truth", fill=TRUTH_COLOUR)
    draw.text((MARGIN + 60, 10), "estimate", fill=ESTIMATE_COLOUR)
    return image


def save_trajectory_plot(path: str, truth_xy: np.ndarray, est_xy: np.ndarray):
    draw_trajectories(np.asarray(truth_xy)[:, 0:2], np.asarray(est_xy)[:, 0:2]).save(path, format="PNG")
