# Shared utilities: config, errors, io, logging, seeded RNG streams
