"""Performance benchmarks for fedspace."""
