# data/__init__.py
# Corpus, vocabulary, feature and tree file handling.
