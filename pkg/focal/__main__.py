from focal.cli import main

raise SystemExit(main())
