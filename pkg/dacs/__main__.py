from dacs.harness.cli import main

main()
