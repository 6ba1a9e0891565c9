"""Peak-aware conditional GAN and two-stream detector for GC-MS spectra."""
