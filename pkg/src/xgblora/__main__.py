from xgblora.cli import main

raise SystemExit(main())
