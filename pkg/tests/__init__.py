# Tracker Tests - Init
