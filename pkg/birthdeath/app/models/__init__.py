"""Models package: rate specifications and numerical result types."""
