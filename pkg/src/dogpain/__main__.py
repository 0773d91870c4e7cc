from dogpain.cli import main

main()
