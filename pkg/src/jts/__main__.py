from jts.cli import main

main()
