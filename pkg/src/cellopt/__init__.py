"""Feature-space modelling and optimization of HTL-free perovskite cells."""
