# Randomness extractors package
