"""
python -m patchlabel
"""
import sys

from patchlabel.cli import main

sys.exit(main())
