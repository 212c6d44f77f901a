from ccprisk.io_cli import main
import sys

sys.exit(main())
