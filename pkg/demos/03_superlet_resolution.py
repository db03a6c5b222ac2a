"""
Superlets sharpen the frequency peak
====================================

A single Morlet wavelet trades time for frequency resolution.  Combining
wavelets of growing cycle count with a geometric mean narrows the peak
without lengthening the shortest wavelet.
"""
import numpy as np

from specpipe.superlet import SuperletConfig, SuperletPlan, fractional_geomean

fs = 8000
t = np.arange(2 * fs) / fs
x = np.sin(2 * np.pi * 400 * t) + np.sin(2 * np.pi * 470 * t)

grid = tuple(np.linspace(300, 600, 61))
for order in (1, 2, 4, 8):
    cfg = SuperletConfig(grid, base_cycles=3, order_min=order, order_max=order, pool_win=1, pool_hop=1, pool_frame=1)
    mag = SuperletPlan(cfg, fs, len(x)).magnitude(x)[:, fs // 2 : -fs // 2].mean(axis=1)
    mag /= mag.max()
    peaks = [grid[i] for i in range(1, len(grid) - 1) if mag[i] > mag[i - 1] and mag[i] > mag[i + 1]]
    dip = mag[np.argmin(np.abs(np.array(grid) - 435))]
    print(f"order {order}: cycles {cfg.cycles(order)}  peaks {[round(p) for p in peaks]}  mid-dip {dip:.2f}")

# fractional orders blend in the last member with a partial weight
print("geomean of 4, 9, 16 at order 2.5:", fractional_geomean([np.array([4.0]), np.array([9.0]), np.array([16.0])], 2.5)[0])
