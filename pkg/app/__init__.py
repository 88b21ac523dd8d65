# Color-names MeanShift tracker
