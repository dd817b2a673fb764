# Replay, scenario and evaluation agents
