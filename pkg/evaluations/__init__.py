# Evaluations module for the forecasting lab
