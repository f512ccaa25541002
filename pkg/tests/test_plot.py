"""
Tests for the trajectory plot.
"""
import os
import tempfile
import unittest

import numpy as np
from PIL import Image

import plot


class PlotTest(unittest.TestCase):
    """
    Draw small trajectories and look at the pixels.
    """
    tmp_files = []

    def tearDown(self) -> None:
        for name in self.tmp_files:
            if os.path.exists(name):
                os.remove(name)
        return super().tearDown()

    def test_colours(self):
        """Truth and estimate are drawn in their own colours"""
        t = np.linspace(0.0, 2.0 * np.pi, 50)
        truth = np.column_stack((np.cos(t), np.sin(t)))
        image = plot.draw_trajectories(truth, 1.1 * truth)
        self.assertEqual(image.size, (plot.IMAGE_SIZE, plot.IMAGE_SIZE))
        colours = {colour for _, colour in image.getcolors(plot.IMAGE_SIZE ** 2)}
        self.assertIn(plot.TRUTH_COLOUR, colours)
        self.assertIn(plot.ESTIMATE_COLOUR, colours)

    def test_single_point(self):
        """A one-row trajectory still draws"""
        image = plot.draw_trajectories(np.zeros((1, 2)), np.zeros((1, 2)))
        self.assertEqual(image.mode, "RGB")

    def test_save(self):
        """The plot is saved as PNG from wider trajectory rows"""
        tmp = tempfile.NamedTemporaryFile(suffix=".png", delete=False)
        tmp.close()
        self.tmp_files.append(tmp.name)
        rows = np.column_stack((np.linspace(0.0, 3.0, 10), np.zeros(10), np.ones(10)))
        plot.save_trajectory_plot(tmp.name, rows, rows + [0.1, 0.0, 0.0])
        with Image.open(tmp.name) as image:
            self.assertEqual(image.format, "PNG")
