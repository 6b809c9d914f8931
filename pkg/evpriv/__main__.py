from evpriv.cli import main

main()
