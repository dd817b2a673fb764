# Errors, binary dumps and run-directory storage
