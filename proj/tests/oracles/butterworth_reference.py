"""Reference magnitudes of the order-4 Butterworth band-pass (0.1-70 Hz,
fs=256), designed by scipy, squared for forward-backward application."""
import numpy as np
from scipy import signal

sos = signal.butter(4, [0.1, 70.0], btype="band", fs=256.0, output="sos")
freqs = [0.05, 0.1, 1.0, 10.0, 40.0, 70.0, 90.0, 120.0]
_, h = signal.sosfreqz(sos, worN=freqs, fs=256.0)
for f, v in zip(freqs, np.abs(h)):
    print(f"{{{f}, {v:.12e}}},")
