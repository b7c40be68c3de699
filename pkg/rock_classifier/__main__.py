import sys

from rock_classifier.cli import main


sys.exit(main())
