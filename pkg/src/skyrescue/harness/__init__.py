"""Command line front-end, oracles, sweeps and plot-data export."""
