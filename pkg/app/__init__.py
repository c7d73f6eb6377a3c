# qrng_mux Application
