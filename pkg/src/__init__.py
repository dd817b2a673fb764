# replayforge source package
