# Reproduction scripts
