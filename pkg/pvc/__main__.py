from pvc.main import main

main()
