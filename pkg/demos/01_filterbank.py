# Walk through the frozen sinc front-end: where the bands sit, what the
# kernels look like in frequency, and what a pure tone does to the bank.
import numpy as np

from rawgat_st.frontend import SincFrontend, build_filterbank
from rawgat_st.tensor import Tensor

bank = build_filterbank(dtype=np.float64)
print("filters:", bank.num_filters, "taps:", bank.kernel_length)

# band edges are mel-spaced, so the low bands are only ~25 Hz wide
for k in (0, 1, 10, 35, 60, 69):
    f1, f2 = bank.band_edges[k]
    print(f"  filter {k:2d}: {f1:7.1f} - {f2:7.1f} Hz (centre {bank.centers[k]:7.1f})")

# frequency response of a few kernels, in dB relative to the unit peak
H = np.abs(np.fft.rfft(bank.impulse_responses.data[:, 0], 16000, axis=1))
for k in (10, 35, 60):
    centre = int(round(bank.centers[k]))
    print(f"  filter {k}: {20 * np.log10(H[k, centre]):6.2f} dB at centre, "
          f"{20 * np.log10(H[k, 0] + 1e-12):7.1f} dB at 0 Hz, {20 * np.log10(H[k, -1] + 1e-12):7.1f} dB at Nyquist")

# a 2 kHz tone lights up the filter whose band contains 2 kHz
fe = SincFrontend(bank, 8000, np.float64)
t = np.arange(8000) / 16000
energy = np.abs(fe.filter(Tensor(np.sin(2 * np.pi * 2000 * t))).data[0]).mean(axis=1)
k = int(np.argmax(energy))
print("2 kHz tone -> strongest filter", k, bank.band_edges[k].round(1))

# after the 3x3 pool the 70 filter rows become 23 image rows
fe.eval()
print("front-end output:", fe(Tensor(np.sin(2 * np.pi * 2000 * t))).shape)
