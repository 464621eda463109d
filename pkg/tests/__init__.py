"""
patchlabel tests
"""
